//! Lattice spectrum and principal eigenfunctions of a graded Koopman matrix.
//!
//! With rows and columns grouped by total degree, the Koopman matrix is
//! (close to) block triangular: `K̄_rs ≈ 0` for `r < s`. Its spectrum is then
//! the union of the diagonal-block spectra, and an eigenvector for an
//! eigenvalue `μ` of `K̄₁₁` is completed degree by degree from
//!
//! ```text
//! Σ_{s≤r} K̄_rs v̄_s = μ v̄_r   ⇒   v̄_r = (μI − K̄_rr)⁻¹ Σ_{s<r} K̄_rs v̄_s
//! ```

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::basis::{multiindices_of_degree, MultiIndex};
use crate::edmd::KoopmanMatrix;
use crate::linalg::{
    complexify, condition_number, smallest_right_singular_vectors, solve_guarded,
    sorted_eigenvalues, C64,
};
use crate::projection::TaylorCoefficients;

/// Per-degree solves with a condition number above this are treated as resonant.
pub const DEFAULT_RESONANCE_THRESHOLD: f64 = 1e10;

/// Eigenvector matrices of `K̄₁₁` conditioned worse than this are treated as defective.
pub const DEFAULT_DEFECT_THRESHOLD: f64 = 1e8;

/// Relative distance under which degree-1 eigenvalues are grouped when `K̄₁₁`
/// is near-defective.
const CLUSTER_RTOL: f64 = 1e-4;

/// One eigenvalue of a diagonal block `K̄_rr`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeEigenvalue {
    pub mu: C64,
    /// `log(μ)/Δt` on the principal branch, when a sampling time is known and `μ ≠ 0`.
    pub lambda: Option<C64>,
    /// Total degree of the block that produced the eigenvalue.
    pub degree: usize,
    /// Multi-index over the degree-1 eigenvalues that best explains this one.
    pub lattice_label: Option<MultiIndex>,
    pub match_error: Option<f64>,
    /// `μ` is exactly zero, so no generator eigenvalue exists.
    pub vanishing: bool,
}

/// Eigenvalues of every diagonal block, degree by degree.
pub fn block_eigenvalues(k: &KoopmanMatrix, dt: Option<f64>) -> Vec<LatticeEigenvalue> {
    let mut out = Vec::with_capacity(k.values().nrows());
    for blk in k.blocks() {
        let block = k.block(blk.degree, blk.degree);
        for mu in sorted_eigenvalues(&block) {
            let vanishing = mu == C64::new(0.0, 0.0);
            let lambda = match dt {
                Some(dt) if !vanishing => Some(mu.ln() / dt),
                _ => None,
            };
            out.push(LatticeEigenvalue {
                mu,
                lambda,
                degree: blk.degree,
                lattice_label: None,
                match_error: None,
                vanishing,
            });
        }
    }
    out
}

/// True when some degree-1 eigenvalue has `|Im λ|·Δt ≥ 0.9π`, i.e. the
/// sampling time can no longer tell `λ` from `λ ± 2πi/Δt`.
pub fn aliasing_warning(eigs: &[LatticeEigenvalue], dt: f64) -> bool {
    eigs.iter()
        .filter(|e| e.degree == 1)
        .filter_map(|e| e.lambda)
        .any(|l| l.im.abs() * dt >= 0.9 * std::f64::consts::PI)
}

/// Outcome of [`lattice_match`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeReport {
    /// Input eigenvalues with `lattice_label` / `match_error` filled in.
    pub eigenvalues: Vec<LatticeEigenvalue>,
    /// Largest matching error per degree; `None` for degree 0 and empty degrees.
    pub max_error_by_degree: Vec<Option<f64>>,
    /// Positions (into `eigenvalues`) of eigenvalues farther than `tol` from the lattice.
    pub unmatched: Vec<usize>,
    /// Whether errors were measured on generator eigenvalues `λ` (true) or on `μ`.
    pub continuous_time: bool,
}

impl LatticeReport {
    pub fn mean_error(&self) -> Option<f64> {
        let errs: Vec<f64> = self
            .eigenvalues
            .iter()
            .filter_map(|e| e.match_error)
            .collect();
        if errs.is_empty() {
            None
        } else {
            Some(errs.iter().sum::<f64>() / errs.len() as f64)
        }
    }

    pub fn max_error(&self) -> Option<f64> {
        self.eigenvalues
            .iter()
            .filter_map(|e| e.match_error)
            .fold(None, |acc, e| Some(acc.map_or(e, |a: f64| a.max(e))))
    }
}

/// Labels each eigenvalue of degree `r ≥ 1` with the multi-index `α`, `|α| = r`,
/// whose lattice point `Σ αⱼλⱼ` (or `∏ μⱼ^{αⱼ}` without a sampling time) is
/// closest, using the degree-1 eigenvalues as generators. The constant
/// block is left out.
pub fn lattice_match(eigs: &[LatticeEigenvalue], tol: f64) -> LatticeReport {
    let generators: Vec<&LatticeEigenvalue> = eigs.iter().filter(|e| e.degree == 1).collect();
    let continuous_time = !generators.is_empty()
        && eigs
            .iter()
            .filter(|e| e.degree >= 1)
            .all(|e| e.lambda.is_some());
    let max_degree = eigs.iter().map(|e| e.degree).max().unwrap_or(0);
    let mut out: Vec<LatticeEigenvalue> = eigs.to_vec();
    let mut max_error_by_degree = vec![None; max_degree + 1];
    let mut unmatched = Vec::new();
    let g = generators.len();

    for (pos, e) in out.iter_mut().enumerate() {
        e.lattice_label = None;
        e.match_error = None;
        if e.degree == 0 {
            continue;
        }
        if g == 0 {
            unmatched.push(pos);
            continue;
        }
        let mut best: Option<(f64, MultiIndex)> = None;
        for alpha in multiindices_of_degree(g, e.degree) {
            let err = if continuous_time {
                let predicted: C64 = alpha
                    .exponents()
                    .iter()
                    .zip(&generators)
                    .map(|(&a, gen)| gen.lambda.unwrap() * a as f64)
                    .sum();
                (e.lambda.unwrap() - predicted).norm()
            } else {
                let predicted: C64 = alpha
                    .exponents()
                    .iter()
                    .zip(&generators)
                    .map(|(&a, gen)| gen.mu.powu(a))
                    .product();
                (e.mu - predicted).norm()
            };
            if best.as_ref().is_none_or(|(b, _)| err < *b) {
                best = Some((err, alpha));
            }
        }
        let (err, alpha) = best.expect("at least one multi-index per degree");
        e.match_error = Some(err);
        let slot = &mut max_error_by_degree[e.degree];
        *slot = Some(slot.map_or(err, |m: f64| m.max(err)));
        if err <= tol {
            e.lattice_label = Some(alpha);
        } else {
            unmatched.push(pos);
        }
    }

    LatticeReport {
        eigenvalues: out,
        max_error_by_degree,
        unmatched,
        continuous_time,
    }
}

/// Nearest lattice point `Σ αⱼ gⱼ` with `|α| ≤ max_degree` for each value,
/// returned as the multi-index and the distance.
pub fn nearest_lattice_points(
    values: &[C64],
    generators: &[C64],
    max_degree: usize,
) -> Vec<Option<(MultiIndex, f64)>> {
    if generators.is_empty() {
        return vec![None; values.len()];
    }
    let mut lattice = Vec::new();
    for r in 0..=max_degree {
        for alpha in multiindices_of_degree(generators.len(), r) {
            let point: C64 = alpha
                .exponents()
                .iter()
                .zip(generators)
                .map(|(&a, g)| g * a as f64)
                .sum();
            lattice.push((alpha, point));
        }
    }
    values
        .iter()
        .map(|v| {
            lattice
                .iter()
                .map(|(alpha, p)| (alpha, (v - p).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(alpha, d)| (alpha.clone(), d))
        })
        .collect()
}

/// Outcome of the degree-`r` solve in the eigenvector recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegreeSolve {
    pub degree: usize,
    pub condition: f64,
    /// The solve was ill-conditioned and fell back to truncated least squares.
    pub resonant: bool,
}

/// Taylor coefficients of a principal eigenfunction.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalEigenfunction {
    pub mu: C64,
    pub coefficients: TaylorCoefficients<C64>,
    pub degree_max: usize,
    pub conditioning: Vec<DegreeSolve>,
    /// `K̄₁₁` was near-defective and the linear part is a basis vector of an
    /// invariant subspace rather than an eigenvector.
    pub defective: bool,
}

impl PrincipalEigenfunction {
    pub fn lambda(&self, dt: f64) -> Option<C64> {
        (self.mu != C64::new(0.0, 0.0)).then(|| self.mu.ln() / dt)
    }

    pub fn is_resonant(&self) -> bool {
        self.conditioning.iter().any(|d| d.resonant)
    }

    /// Euclidean norm of the coefficient block of total degree `r`.
    pub fn block_norm(&self, r: usize) -> f64 {
        let basis = self.coefficients.basis();
        basis
            .degree_offsets()
            .get(r)
            .map(|b| {
                self.coefficients
                    .coefficients()
                    .rows(b.start, b.size)
                    .norm()
            })
            .unwrap_or(0.0)
    }

    /// Root-test estimate of the polydisc radius of convergence from the upper
    /// half of the degrees; `None` when those blocks vanish.
    pub fn convergence_radius_estimate(&self) -> Option<f64> {
        let d = self.degree_max;
        if d < 2 {
            return None;
        }
        let lo = d.div_ceil(2).max(2);
        (lo..=d)
            .filter_map(|r| {
                let nrm = self.block_norm(r);
                (nrm > 1e-14).then(|| nrm.powf(-1.0 / r as f64))
            })
            .fold(None, |acc: Option<f64>, r| {
                Some(acc.map_or(r, |a| a.min(r)))
            })
    }

    /// Coefficients for original coordinates when the fit was done on data
    /// mapped by `z = ρ(x − x*)`. The linear block keeps unit norm.
    pub fn rescaled_coordinates(&self, rho: f64) -> Self {
        let basis = self.coefficients.basis().clone();
        let c = self.coefficients.coefficients();
        let scaled = DVector::from_fn(c.len(), |i, _| {
            let r = basis.degree_of(i) as i32;
            c[i] * rho.powi(r - 1)
        });
        Self {
            coefficients: TaylorCoefficients::new(basis, scaled).expect("same basis"),
            ..self.clone()
        }
    }
}

/// Knobs of [`principal_eigenfunctions_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenfunctionOptions {
    pub resonance_threshold: f64,
    pub defect_threshold: f64,
}

impl Default for EigenfunctionOptions {
    fn default() -> Self {
        Self {
            resonance_threshold: DEFAULT_RESONANCE_THRESHOLD,
            defect_threshold: DEFAULT_DEFECT_THRESHOLD,
        }
    }
}

pub fn principal_eigenfunctions(k: &KoopmanMatrix) -> Vec<PrincipalEigenfunction> {
    principal_eigenfunctions_with(k, &EigenfunctionOptions::default())
}

/// One principal eigenfunction per eigenvalue of `K̄₁₁`.
pub fn principal_eigenfunctions_with(
    k: &KoopmanMatrix,
    opts: &EigenfunctionOptions,
) -> Vec<PrincipalEigenfunction> {
    if k.max_degree() < 1 {
        return Vec::new();
    }
    let k11 = k.block(1, 1);
    let n = k11.nrows();
    let mus = sorted_eigenvalues(&k11);
    let k11c = complexify(&k11);
    let shifted = |mu: C64| &k11c - DMatrix::<C64>::identity(n, n) * mu;

    let mut linear: Vec<(C64, DVector<C64>)> = mus
        .iter()
        .map(|&mu| {
            (
                mu,
                smallest_right_singular_vectors(&shifted(mu), 1)
                    .column(0)
                    .into_owned(),
            )
        })
        .collect();
    let w = DMatrix::from_columns(&linear.iter().map(|(_, v)| v.clone()).collect::<Vec<_>>());
    let defective = condition_number(&w) > opts.defect_threshold;
    if defective {
        warn!("degree-1 block is near-defective; using invariant-subspace bases");
        linear = invariant_subspace_bases(&k11c, &mus);
    }

    linear
        .into_iter()
        .map(|(mu, v1)| recurse(k, mu, normalize_phase(v1), opts, defective))
        .collect()
}

/// Groups close eigenvalues and returns an orthonormal basis of each group's
/// invariant subspace, paired with the group mean.
fn invariant_subspace_bases(k11: &DMatrix<C64>, mus: &[C64]) -> Vec<(C64, DVector<C64>)> {
    let n = k11.nrows();
    let scale = mus
        .iter()
        .map(|m| m.norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut group_of = vec![usize::MAX; mus.len()];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..mus.len() {
        if group_of[i] != usize::MAX {
            continue;
        }
        let gid = groups.len();
        let mut members = vec![i];
        group_of[i] = gid;
        let mut cursor = 0;
        while cursor < members.len() {
            let a = members[cursor];
            for j in 0..mus.len() {
                if group_of[j] == usize::MAX && (mus[a] - mus[j]).norm() <= CLUSTER_RTOL * scale {
                    group_of[j] = gid;
                    members.push(j);
                }
            }
            cursor += 1;
        }
        groups.push(members);
    }
    let mut out = Vec::with_capacity(mus.len());
    for members in groups {
        let mean: C64 = members.iter().map(|&i| mus[i]).sum::<C64>() / members.len() as f64;
        let shifted = k11 - DMatrix::<C64>::identity(n, n) * mean;
        let mut power = DMatrix::<C64>::identity(n, n);
        for _ in 0..members.len() {
            power = &power * &shifted;
        }
        let basis = smallest_right_singular_vectors(&power, members.len());
        for c in 0..members.len() {
            out.push((mean, basis.column(c).into_owned()));
        }
    }
    out
}

/// Unit norm, first significant component real and positive.
fn normalize_phase(v: DVector<C64>) -> DVector<C64> {
    let nrm = v.norm();
    if nrm == 0.0 {
        return v;
    }
    let v = v / C64::new(nrm, 0.0);
    let big = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    match v.iter().find(|z| z.norm() > 1e-8 * big) {
        Some(first) => {
            let phase = first.conj() / first.norm();
            v * phase
        }
        None => v,
    }
}

fn recurse(
    k: &KoopmanMatrix,
    mu: C64,
    v1: DVector<C64>,
    opts: &EigenfunctionOptions,
    defective: bool,
) -> PrincipalEigenfunction {
    let blocks = k.blocks();
    let d = k.max_degree();
    let mut parts: Vec<DVector<C64>> = vec![DVector::zeros(blocks[0].size), v1];
    let mut conditioning = Vec::new();
    for r in 2..=d {
        let size = blocks[r].size;
        let mut rhs = DVector::<C64>::zeros(size);
        for (s, part) in parts.iter().enumerate().skip(1) {
            rhs += complexify(&k.block(r, s)) * part;
        }
        let a = DMatrix::<C64>::identity(size, size) * mu - complexify(&k.block(r, r));
        let (v, condition, resonant) = solve_guarded(&a, &rhs, opts.resonance_threshold);
        if resonant {
            warn!("near-resonant solve at degree {r} for μ = {mu} (condition {condition:e})");
        }
        conditioning.push(DegreeSolve {
            degree: r,
            condition,
            resonant,
        });
        parts.push(v);
    }
    let mut coeffs = DVector::<C64>::zeros(k.values().nrows());
    for (blk, part) in blocks.iter().zip(&parts) {
        coeffs.rows_mut(blk.start, blk.size).copy_from(part);
    }
    PrincipalEigenfunction {
        mu,
        coefficients: TaylorCoefficients::new(k.basis().clone(), coeffs).expect("sized to basis"),
        degree_max: d,
        conditioning,
        defective,
    }
}

/// Value of an eigenfunction at one grid point, with the polar parts used
/// for plotting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenfunctionValue {
    pub value: C64,
    pub abs: f64,
    pub arg: f64,
}

/// Evaluates `Σᵢ cᵢ βᵢ (p − x*)^{α(i)}` on each row `p` of `grid`.
pub fn evaluate_eigenfunction(
    ef: &PrincipalEigenfunction,
    grid: &DMatrix<f64>,
    center: &DVector<f64>,
) -> Vec<EigenfunctionValue> {
    let mut shifted = vec![0.0; center.len()];
    (0..grid.nrows())
        .map(|k| {
            for (c, s) in shifted.iter_mut().enumerate() {
                *s = grid[(k, c)] - center[c];
            }
            let value = ef.coefficients.evaluate_at(&shifted);
            EigenfunctionValue {
                value,
                abs: value.norm(),
                arg: value.arg(),
            }
        })
        .collect()
}
