//! Taylor-type kernels, Gram matrices and safeguarded application of `G⁻¹`.
//!
//! Both kernel families expand as `k(x, y) = Σ_α β_α² x^α y^α`, so a Gram
//! matrix factors as `G = Φ Φᵀ` with the feature matrix `Φ_{kα} = β_α x_k^α`.
//! [`InversionPolicy::FeatureLeastNorm`] works with a truncated `Φ` instead of
//! `G`, which keeps the conditioning at `√cond(G)`.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::basis::{binomial, enumerate_multiindices, MonomialBasis, MultiIndex};
use crate::error::{Error, Result, SampleRole};
use crate::linalg::sorted_svd;

/// Relative eigenvalue cutoff of the spectral pseudo-inverse.
pub const DEFAULT_PINV_RTOL: f64 = 1e-12;

/// Relative singular-value cutoff on the feature matrix.
pub const DEFAULT_FEATURE_RTOL: f64 = 1e-15;

/// Target bound on the dropped Mercer tail, relative to `k(x, x) ≥ 1`.
pub const FEATURE_TAIL_TOL: f64 = 1e-16;

/// Upper limit on the number of retained features.
pub const MAX_FEATURES: usize = 50_000;

/// Features are kept at least up to this total degree.
const MIN_FEATURE_DEGREE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    /// `∏ᵢ 1/(1 − xᵢyᵢ)`, Hardy space on the unit polydisc.
    SzegoPolydisc,
    /// `exp(xᵀy)`, Fock-type space of entire functions.
    Exponential,
}

impl KernelFamily {
    pub fn domain_radius(self) -> f64 {
        match self {
            KernelFamily::SzegoPolydisc => 1.0,
            KernelFamily::Exponential => f64::INFINITY,
        }
    }

    /// Kernel on already-translated coordinates.
    pub fn eval_centered(self, u: &[f64], v: &[f64]) -> f64 {
        match self {
            KernelFamily::SzegoPolydisc => {
                u.iter().zip(v).map(|(a, b)| 1.0 / (1.0 - a * b)).product()
            }
            KernelFamily::Exponential => u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>().exp(),
        }
    }

    /// Weight `β_α` making `β_α x^α` orthonormal in the kernel's RKHS.
    pub fn feature_weight(self, alpha: &MultiIndex) -> f64 {
        match self {
            KernelFamily::SzegoPolydisc => 1.0,
            KernelFamily::Exponential => 1.0 / alpha.factorial().sqrt(),
        }
    }

    /// The orthonormal monomial basis of total degree `≤ d`.
    pub fn orthonormal_basis(self, n: usize, d: usize) -> Result<MonomialBasis> {
        match self {
            KernelFamily::SzegoPolydisc => MonomialBasis::new(n, d),
            KernelFamily::Exponential => MonomialBasis::exponential(n, d),
        }
    }

    /// Upper bound on `Σ_{|α|=r} β_α² |z^α|²` over points with every
    /// `|zᵢ| ≤ radii[i]`.
    fn degree_term_bound(self, radii: &[f64], r: usize) -> f64 {
        let n = radii.len();
        match self {
            KernelFamily::SzegoPolydisc => {
                let q = radii.iter().map(|x| x * x).fold(0.0, f64::max);
                binomial(n + r - 1, r) as f64 * q.powi(r as i32)
            }
            KernelFamily::Exponential => {
                let s: f64 = radii.iter().map(|x| x * x).sum();
                (1..=r).fold(1.0, |acc, i| acc * s / i as f64)
            }
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelFamily::SzegoPolydisc => "szego",
            KernelFamily::Exponential => "exponential",
        })
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "szego" | "szegő" | "szego-polydisc" => Ok(KernelFamily::SzegoPolydisc),
            "exponential" | "exp" => Ok(KernelFamily::Exponential),
            other => Err(Error::InvalidArgument(format!(
                "unknown kernel '{other}' (expected szego or exponential)"
            ))),
        }
    }
}

/// A kernel family translated to a center `x*`: `k(x − x*, y − x*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    center: DVector<f64>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, center: DVector<f64>) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::InvalidArgument(
                "kernel center must have at least one coordinate".into(),
            ));
        }
        Ok(Self { family, center })
    }

    /// Kernel centered at the origin of `ℝⁿ`.
    pub fn centered(family: KernelFamily, n: usize) -> Result<Self> {
        Self::new(family, DVector::zeros(n))
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn dimension(&self) -> usize {
        self.center.len()
    }

    pub fn domain_radius(&self) -> f64 {
        self.family.domain_radius()
    }

    /// Evaluates `k(x, y)` after translating both arguments by the center.
    pub fn kernel_eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let u = self.translate_checked(x, 0, SampleRole::Source)?;
        let v = self.translate_checked(y, 0, SampleRole::Source)?;
        Ok(self.family.eval_centered(&u, &v))
    }

    fn translate_checked(&self, x: &[f64], index: usize, role: SampleRole) -> Result<Vec<f64>> {
        if x.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                context: "kernel argument",
                expected: self.dimension(),
                found: x.len(),
            });
        }
        let u: Vec<f64> = x
            .iter()
            .zip(self.center.iter())
            .map(|(a, c)| a - c)
            .collect();
        let magnitude = u.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if !(magnitude < self.domain_radius()) {
            return Err(Error::DomainViolation {
                index,
                role,
                magnitude,
                radius: self.domain_radius(),
            });
        }
        Ok(u)
    }

    /// Rows of `points` minus the center, after checking every row is inside
    /// the kernel domain. The first offending row is named in the error.
    pub fn translate_points(
        &self,
        points: &DMatrix<f64>,
        role: SampleRole,
    ) -> Result<DMatrix<f64>> {
        if points.ncols() != self.dimension() {
            return Err(Error::DimensionMismatch {
                context: "kernel point set",
                expected: self.dimension(),
                found: points.ncols(),
            });
        }
        let mut out = points.clone();
        for k in 0..points.nrows() {
            let mut magnitude: f64 = 0.0;
            for c in 0..points.ncols() {
                out[(k, c)] = points[(k, c)] - self.center[c];
                magnitude = magnitude.max(out[(k, c)].abs());
            }
            if !(magnitude < self.domain_radius()) {
                return Err(Error::DomainViolation {
                    index: k,
                    role,
                    magnitude,
                    radius: self.domain_radius(),
                });
            }
        }
        Ok(out)
    }
}

/// Largest `|pᵢ − x*ᵢ|` over all rows and coordinates; useful to choose a rescaling.
pub fn max_translated_magnitude(points: &DMatrix<f64>, center: &DVector<f64>) -> f64 {
    let mut m: f64 = 0.0;
    for k in 0..points.nrows() {
        for c in 0..points.ncols() {
            m = m.max((points[(k, c)] - center[c]).abs());
        }
    }
    m
}

/// How `G⁻¹` is applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InversionPolicy {
    /// Pivoted LU solve; fails if `G` is numerically singular.
    Exact,
    /// Symmetric eigendecomposition with eigenvalues below `rtol · λ_max` zeroed.
    Pseudoinverse { rtol: f64 },
    /// `(G + γI)⁻¹`.
    Ridge { gamma: f64 },
    /// Through the truncated Mercer feature factor `G = ΦΦᵀ`, singular values of
    /// `Φ` below `rtol · s_max` dropped.
    FeatureLeastNorm { rtol: f64 },
}

impl Default for InversionPolicy {
    fn default() -> Self {
        InversionPolicy::FeatureLeastNorm {
            rtol: DEFAULT_FEATURE_RTOL,
        }
    }
}

impl InversionPolicy {
    fn validate(self) -> Result<Self> {
        let ok = match self {
            InversionPolicy::Exact => true,
            InversionPolicy::Pseudoinverse { rtol }
            | InversionPolicy::FeatureLeastNorm { rtol } => (0.0..1.0).contains(&rtol),
            InversionPolicy::Ridge { gamma } => gamma >= 0.0 && gamma.is_finite(),
        };
        if ok {
            Ok(self)
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid inversion policy {self:?}"
            )))
        }
    }
}

impl fmt::Display for InversionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InversionPolicy::Exact => f.write_str("exact"),
            InversionPolicy::Pseudoinverse { rtol } => write!(f, "pinv:{rtol:e}"),
            InversionPolicy::Ridge { gamma } => write!(f, "ridge:{gamma:e}"),
            InversionPolicy::FeatureLeastNorm { rtol } => write!(f, "feature:{rtol:e}"),
        }
    }
}

impl FromStr for InversionPolicy {
    type Err = Error;

    /// `exact`, `pinv[:rtol]`, `ridge:gamma` or `feature[:rtol]`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s.as_str(), None),
        };
        let number = |default: Option<f64>| -> Result<f64> {
            match arg {
                Some(a) => a
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("policy parameter '{a}': {e}"))),
                None => default.ok_or_else(|| {
                    Error::InvalidArgument(format!("policy '{name}' needs a parameter"))
                }),
            }
        };
        let policy = match name {
            "exact" if arg.is_none() => InversionPolicy::Exact,
            "pinv" | "pseudoinverse" => InversionPolicy::Pseudoinverse {
                rtol: number(Some(DEFAULT_PINV_RTOL))?,
            },
            "ridge" => InversionPolicy::Ridge { gamma: number(None)? },
            "feature" | "feature-least-norm" => InversionPolicy::FeatureLeastNorm {
                rtol: number(Some(DEFAULT_FEATURE_RTOL))?,
            },
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown inversion policy '{s}' (expected exact, pinv[:rtol], ridge:gamma or feature[:rtol])"
                )))
            }
        };
        policy.validate()
    }
}

/// Truncated feature matrix `Φ = U S Wᵀ` (thin SVD).
#[derive(Debug, Clone)]
pub struct FeatureFactor {
    /// Features are all multi-indices up to this total degree, graded order.
    pub degree: usize,
    /// Bound on the dropped part of any kernel value.
    pub tail_bound: f64,
    pub weights: Vec<f64>,
    u: DMatrix<f64>,
    s: DVector<f64>,
    w: DMatrix<f64>,
}

impl FeatureFactor {
    fn build(family: KernelFamily, points: &DMatrix<f64>, min_degree: usize) -> Self {
        let n = points.ncols();
        let radii: Vec<f64> = (0..n)
            .map(|c| points.column(c).iter().map(|v| v.abs()).fold(0.0, f64::max))
            .collect();
        let (degree, tail_bound) = truncation_degree(family, &radii, min_degree);
        let indices = enumerate_multiindices(n, degree).expect("n >= 1");
        let weights: Vec<f64> = indices.iter().map(|a| family.feature_weight(a)).collect();
        let m = points.nrows();
        let p = indices.len();
        // Φᵀ is P×M; a QR first keeps the SVD at M×M.
        let mut phi_t = DMatrix::zeros(p, m);
        let mut row = vec![0.0; n];
        for k in 0..m {
            for (c, v) in row.iter_mut().enumerate() {
                *v = points[(k, c)];
            }
            for (i, (alpha, b)) in indices.iter().zip(&weights).enumerate() {
                phi_t[(i, k)] = b * alpha.monomial(&row);
            }
        }
        let (q, r) = if p >= m {
            let qr = phi_t.qr();
            (qr.q(), qr.r())
        } else {
            (DMatrix::identity(p, p), phi_t)
        };
        // Φ = Rᵀ Qᵀ,  Rᵀ = U S Ŵᵀ  ⇒  W = Q Ŵ
        let svd = sorted_svd(&r.transpose());
        let w = q * svd.v;
        FeatureFactor {
            degree,
            tail_bound,
            weights,
            u: svd.u,
            s: svd.s,
            w,
        }
    }

    pub fn num_features(&self) -> usize {
        self.weights.len()
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.s
    }

    fn kept(&self, rtol: f64) -> usize {
        let smax = self.s.iter().copied().fold(0.0, f64::max);
        self.s
            .iter()
            .filter(|&&s| s > rtol * smax && s > 0.0)
            .count()
    }
}

fn truncation_degree(family: KernelFamily, radii: &[f64], min_degree: usize) -> (usize, f64) {
    let n = radii.len();
    let mut degree = min_degree;
    loop {
        let next = family.degree_term_bound(radii, degree + 1);
        let after = family.degree_term_bound(radii, degree + 2);
        let ratio = if next > 0.0 { after / next } else { 0.0 };
        let tail = if next == 0.0 {
            0.0
        } else if ratio < 1.0 {
            next / (1.0 - ratio)
        } else {
            f64::INFINITY
        };
        if tail <= FEATURE_TAIL_TOL {
            return (degree, tail);
        }
        if binomial(n + degree + 1, degree + 1) > MAX_FEATURES {
            warn!(
                "feature truncation capped at degree {degree} ({} features); Mercer tail bound {tail:e}",
                binomial(n + degree, degree)
            );
            return (degree, tail);
        }
        degree += 1;
    }
}

/// Gram matrix `G_{ij} = k(xᵢ, xⱼ)` together with its eigendecomposition.
#[derive(Debug)]
pub struct GramMatrix {
    family: KernelFamily,
    /// Translated sample points (rows).
    points: DMatrix<f64>,
    values: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    effective_rank: usize,
    condition_estimate: f64,
    features: OnceLock<FeatureFactor>,
}

impl GramMatrix {
    /// Builds `G` on `points` (rows), translating by the kernel center.
    pub fn new(spec: &KernelSpec, points: &DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "Gram matrix needs at least one point".into(),
            ));
        }
        let z = spec.translate_points(points, SampleRole::Source)?;
        Ok(Self::from_translated(spec.family(), z))
    }

    pub(crate) fn from_translated(family: KernelFamily, z: DMatrix<f64>) -> Self {
        let values = kernel_block(family, &z, &z);
        let eig = values.clone().symmetric_eigen();
        let lmax = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let cut = DEFAULT_PINV_RTOL * lmax;
        let above: Vec<f64> = eig
            .eigenvalues
            .iter()
            .copied()
            .filter(|&l| l > cut)
            .collect();
        let lmin = above.iter().copied().fold(f64::INFINITY, f64::min);
        let condition_estimate = if above.is_empty() {
            f64::INFINITY
        } else {
            lmax / lmin
        };
        Self {
            family,
            points: z,
            values,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            effective_rank: above.len(),
            condition_estimate,
            features: OnceLock::new(),
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    /// The translated sample points the matrix was built on.
    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Number of eigenvalues above `1e-12 · λ_max`.
    pub fn effective_rank(&self) -> usize {
        self.effective_rank
    }

    /// `λ_max / λ_min⁺` with `λ_min⁺` the smallest eigenvalue above `1e-12 · λ_max`.
    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    /// Mercer feature factor, built on first use.
    pub fn feature_factor(&self) -> &FeatureFactor {
        self.features
            .get_or_init(|| FeatureFactor::build(self.family, &self.points, MIN_FEATURE_DEGREE))
    }

    fn factor_for_degree(&self, degree: usize) -> std::borrow::Cow<'_, FeatureFactor> {
        let cached = self.feature_factor();
        if cached.degree >= degree {
            std::borrow::Cow::Borrowed(cached)
        } else {
            std::borrow::Cow::Owned(FeatureFactor::build(self.family, &self.points, degree))
        }
    }

    fn check_rows(&self, b: &DMatrix<f64>) -> Result<()> {
        if b.nrows() != self.size() {
            return Err(Error::DimensionMismatch {
                context: "right-hand side rows vs Gram size",
                expected: self.size(),
                found: b.nrows(),
            });
        }
        Ok(())
    }

    /// `G⁻¹ B` under `policy`.
    pub fn apply_inverse(&self, b: &DMatrix<f64>, policy: InversionPolicy) -> Result<DMatrix<f64>> {
        self.check_rows(b)?;
        match policy.validate()? {
            InversionPolicy::Exact => {
                let x = self.values.clone().lu().solve(b);
                match x {
                    Some(x) if x.iter().all(|v| v.is_finite()) => Ok(x),
                    _ => Err(Error::SingularMatrix {
                        condition: self.condition_estimate,
                    }),
                }
            }
            InversionPolicy::Pseudoinverse { rtol } => {
                let lmax = self.eigenvalues.iter().copied().fold(0.0, f64::max);
                let v = &self.eigenvectors;
                let mut vtb = v.transpose() * b;
                for (i, &l) in self.eigenvalues.iter().enumerate() {
                    let s = if l > rtol * lmax && l > 0.0 {
                        1.0 / l
                    } else {
                        0.0
                    };
                    vtb.row_mut(i).scale_mut(s);
                }
                Ok(v * vtb)
            }
            InversionPolicy::Ridge { gamma } => {
                let mut shifted = self.values.clone();
                for i in 0..shifted.nrows() {
                    shifted[(i, i)] += gamma;
                }
                if let Some(ch) = shifted.clone().cholesky() {
                    let x = ch.solve(b);
                    if x.iter().all(|v| v.is_finite()) {
                        return Ok(x);
                    }
                }
                match shifted.lu().solve(b) {
                    Some(x) if x.iter().all(|v| v.is_finite()) => Ok(x),
                    _ => Err(Error::SingularMatrix {
                        condition: self.condition_estimate,
                    }),
                }
            }
            InversionPolicy::FeatureLeastNorm { rtol } => {
                let f = self.feature_factor();
                let r = f.kept(rtol);
                let u = f.u.columns(0, r);
                let mut utb = u.transpose() * b;
                for i in 0..r {
                    utb.row_mut(i).scale_mut(1.0 / (f.s[i] * f.s[i]));
                }
                Ok(u * utb)
            }
        }
    }

    /// `Xᵀ G⁻¹ B` where `X` is `basis` evaluated at the Gram points.
    ///
    /// Under [`InversionPolicy::FeatureLeastNorm`] this is computed as
    /// `D Eᵀ Φ⁺ B` with `E` selecting the basis features and `D` the weight
    /// ratios, never forming `Φ⁺ X`.
    pub fn basis_projection(
        &self,
        basis: &MonomialBasis,
        b: &DMatrix<f64>,
        policy: InversionPolicy,
    ) -> Result<DMatrix<f64>> {
        self.check_rows(b)?;
        self.check_basis(basis)?;
        match policy.validate()? {
            InversionPolicy::FeatureLeastNorm { rtol } => {
                let f = self.factor_for_degree(basis.max_degree());
                let r = f.kept(rtol);
                let mut utb = f.u.columns(0, r).transpose() * b;
                for i in 0..r {
                    utb.row_mut(i).scale_mut(1.0 / f.s[i]);
                }
                let n = basis.len();
                let mut out = f.w.view((0, 0), (n, r)) * utb;
                for i in 0..n {
                    out.row_mut(i).scale_mut(basis.weights()[i] / f.weights[i]);
                }
                Ok(out)
            }
            other => {
                let x = basis.evaluate(&self.points)?;
                Ok(x.transpose() * self.apply_inverse(b, other)?)
            }
        }
    }

    /// `Xᵀ G⁻¹ X`, the empirical RKHS Gram matrix of the basis.
    pub fn basis_gram(
        &self,
        basis: &MonomialBasis,
        policy: InversionPolicy,
    ) -> Result<DMatrix<f64>> {
        self.check_basis(basis)?;
        match policy.validate()? {
            InversionPolicy::FeatureLeastNorm { rtol } => {
                let f = self.factor_for_degree(basis.max_degree());
                let r = f.kept(rtol);
                let n = basis.len();
                let mut top = f.w.view((0, 0), (n, r)).into_owned();
                for i in 0..n {
                    top.row_mut(i).scale_mut(basis.weights()[i] / f.weights[i]);
                }
                Ok(&top * top.transpose())
            }
            other => {
                let x = basis.evaluate(&self.points)?;
                Ok(x.transpose() * self.apply_inverse(&x, other)?)
            }
        }
    }

    fn check_basis(&self, basis: &MonomialBasis) -> Result<()> {
        if basis.dimension() != self.points.ncols() {
            return Err(Error::DimensionMismatch {
                context: "basis dimension vs Gram points",
                expected: self.points.ncols(),
                found: basis.dimension(),
            });
        }
        Ok(())
    }
}

/// `gram_matrix` under its operational name.
pub fn gram_matrix(spec: &KernelSpec, points: &DMatrix<f64>) -> Result<GramMatrix> {
    GramMatrix::new(spec, points)
}

/// `G⁻¹ B` under `policy`.
pub fn apply_gram_inverse(
    g: &GramMatrix,
    b: &DMatrix<f64>,
    policy: InversionPolicy,
) -> Result<DMatrix<f64>> {
    g.apply_inverse(b, policy)
}

/// Entry `(i, j)` is `k(yᵢ, xⱼ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossGramMatrix {
    pub values: DMatrix<f64>,
}

pub fn cross_gram_matrix(
    spec: &KernelSpec,
    xs: &DMatrix<f64>,
    ys: &DMatrix<f64>,
) -> Result<CrossGramMatrix> {
    let zx = spec.translate_points(xs, SampleRole::Source)?;
    let zy = spec.translate_points(ys, SampleRole::Image)?;
    Ok(CrossGramMatrix {
        values: kernel_block(spec.family(), &zy, &zx),
    })
}

/// `out[(i, j)] = k(a_i, b_j)` on translated rows.
pub(crate) fn kernel_block(
    family: KernelFamily,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = (0..a.nrows())
        .map(|i| a.row(i).iter().copied().collect())
        .collect();
    let cols: Vec<Vec<f64>> = (0..b.nrows())
        .map(|j| b.row(j).iter().copied().collect())
        .collect();
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        family.eval_centered(&rows[i], &cols[j])
    })
}
