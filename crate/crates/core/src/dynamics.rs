//! Benchmark vector fields, an RK4 flow map, and snapshot sampling.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_rational::Rational64;
use num_traits::{CheckedAdd, CheckedMul, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::MonomialBasis;
use crate::edmd::{KoopmanMatrix, Method, SnapshotSet};
use crate::error::{Error, Result};
use crate::linalg::{sorted_eigenvalues, C64};

/// Largest RK4 step used by [`default_substeps`].
pub const MAX_STEP: f64 = 0.01;

type Field = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// A vector field `ẋ = f(x)` on `ℝⁿ`.
#[derive(Clone)]
pub enum System {
    /// `ẋ = x − x³`.
    Cubic1D,
    /// `ẋ₁ = −x₂`, `ẋ₂ = −(1 − x₁²)x₂ + x₁`.
    VanDerPol,
    /// `ẋ₁ = −x₁ − x₁²x₂ − x₂³`, `ẋ₂ = −x₂ + x₁x₂² + x₁³`; in polar form
    /// `ṙ = −r`, `θ̇ = r²`.
    Rotating2D,
    /// `ẋᵢ = aᵢ xᵢ`.
    LinearDiagonal(Vec<f64>),
    Custom {
        name: String,
        dimension: usize,
        field: Arc<Field>,
        equilibria: Vec<Vec<f64>>,
    },
}

impl fmt::Debug for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            System::Custom {
                name, dimension, ..
            } => f
                .debug_struct("Custom")
                .field("name", name)
                .field("dimension", dimension)
                .finish_non_exhaustive(),
            other => f.write_str(&other.name()),
        }
    }
}

impl System {
    pub fn custom(
        name: impl Into<String>,
        dimension: usize,
        equilibria: Vec<Vec<f64>>,
        field: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        System::Custom {
            name: name.into(),
            dimension,
            field: Arc::new(field),
            equilibria,
        }
    }

    /// Tag used on the command line and in snapshot metadata.
    pub fn name(&self) -> String {
        match self {
            System::Cubic1D => "cubic1d".into(),
            System::VanDerPol => "vanderpol".into(),
            System::Rotating2D => "rotating2d".into(),
            System::LinearDiagonal(a) => {
                let parts: Vec<String> = a.iter().map(|v| v.to_string()).collect();
                format!("linear:{}", parts.join(","))
            }
            System::Custom { name, .. } => name.clone(),
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            System::Cubic1D => 1,
            System::VanDerPol | System::Rotating2D => 2,
            System::LinearDiagonal(a) => a.len(),
            System::Custom { dimension, .. } => *dimension,
        }
    }

    /// Writes `f(x)` into `out`.
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            System::Cubic1D => out[0] = x[0] - x[0] * x[0] * x[0],
            System::VanDerPol => {
                out[0] = -x[1];
                out[1] = -(1.0 - x[0] * x[0]) * x[1] + x[0];
            }
            System::Rotating2D => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                out[0] = -x[0] - r2 * x[1];
                out[1] = -x[1] + r2 * x[0];
            }
            System::LinearDiagonal(a) => {
                for ((o, xi), ai) in out.iter_mut().zip(x).zip(a) {
                    *o = ai * xi;
                }
            }
            System::Custom { field, .. } => field(x, out),
        }
    }

    pub fn known_equilibria(&self) -> Vec<Vec<f64>> {
        match self {
            System::Cubic1D => vec![vec![0.0], vec![1.0], vec![-1.0]],
            System::VanDerPol | System::Rotating2D => vec![vec![0.0, 0.0]],
            System::LinearDiagonal(a) => vec![vec![0.0; a.len()]],
            System::Custom { equilibria, .. } => equilibria.clone(),
        }
    }

    /// Central-difference Jacobian of the vector field at `x`.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dimension();
        let mut jac = DMatrix::zeros(n, n);
        let (mut plus, mut minus) = (vec![0.0; n], vec![0.0; n]);
        let mut probe = x.to_vec();
        for j in 0..n {
            let h = 1e-6 * x[j].abs().max(1.0);
            probe[j] = x[j] + h;
            self.eval(&probe, &mut plus);
            probe[j] = x[j] - h;
            self.eval(&probe, &mut minus);
            probe[j] = x[j];
            for i in 0..n {
                jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        jac
    }

    /// Eigenvalues of [`System::jacobian`], sorted like block eigenvalues.
    pub fn jacobian_eigenvalues(&self, x: &[f64]) -> Vec<C64> {
        sorted_eigenvalues(&self.jacobian(x))
    }

    /// Eigenvalues of the Jacobian at `known_equilibria()[0]`, when known.
    pub fn known_jacobian_eigs(&self) -> Option<Vec<C64>> {
        let h = 3f64.sqrt() / 2.0;
        match self {
            System::Cubic1D => Some(vec![C64::new(1.0, 0.0)]),
            System::VanDerPol => Some(vec![C64::new(-0.5, h), C64::new(-0.5, -h)]),
            System::Rotating2D => Some(vec![C64::new(-1.0, 0.0); 2]),
            System::LinearDiagonal(a) => Some(a.iter().map(|&v| C64::new(v, 0.0)).collect()),
            System::Custom { .. } => None,
        }
    }
}

impl FromStr for System {
    type Err = Error;

    /// Accepts `cubic1d`, `vanderpol`, `rotating2d` and `linear:a1,a2,...`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "cubic1d" | "cubic" => Ok(System::Cubic1D),
            "vanderpol" | "van-der-pol" | "vdp" => Ok(System::VanDerPol),
            "rotating2d" | "rotating" => Ok(System::Rotating2D),
            other => {
                if let Some(rest) = other.strip_prefix("linear:") {
                    let rates = rest
                        .split(',')
                        .map(|p| p.trim().parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| Error::InvalidArgument(format!("linear rates: {e}")))?;
                    if rates.is_empty() || rates.iter().any(|r| !r.is_finite()) {
                        return Err(Error::InvalidArgument("linear rates must be finite".into()));
                    }
                    Ok(System::LinearDiagonal(rates))
                } else {
                    Err(Error::InvalidArgument(format!(
                        "unknown system '{s}' (expected cubic1d, vanderpol, rotating2d or linear:a,b,...)"
                    )))
                }
            }
        }
    }
}

/// Number of RK4 steps that keeps the step at or below [`MAX_STEP`].
pub fn default_substeps(dt: f64) -> usize {
    ((dt / MAX_STEP) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Classical RK4 with `substeps` equal steps across `dt`.
pub fn rk4_flow(system: &System, x0: &[f64], dt: f64, substeps: usize) -> Result<Vec<f64>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    if substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be at least 1".into()));
    }
    let n = system.dimension();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            context: "initial state vs system dimension",
            expected: n,
            found: x0.len(),
        });
    }
    let h = dt / substeps as f64;
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for _ in 0..substeps {
        system.eval(&x, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        system.eval(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        system.eval(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        system.eval(&tmp, &mut k4);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { sample: None });
        }
    }
    Ok(x)
}

/// Uniform sampling of initial conditions in an axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    count: usize,
    low: Vec<f64>,
    high: Vec<f64>,
    dt: f64,
    seed: u64,
}

impl SamplingPlan {
    /// Points are drawn as `low + (high − low)·u` with `u ∈ [0, 1)`, so the
    /// upper face of the box is never sampled. A degenerate side
    /// (`low == high`) pins that coordinate.
    pub fn new(count: usize, low: Vec<f64>, high: Vec<f64>, dt: f64, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument(
                "sample count must be at least 1".into(),
            ));
        }
        if low.is_empty() || low.len() != high.len() {
            return Err(Error::DimensionMismatch {
                context: "sampling box low vs high",
                expected: low.len(),
                found: high.len(),
            });
        }
        if let Some(i) = (0..low.len())
            .find(|&i| !(low[i].is_finite() && high[i].is_finite() && low[i] <= high[i]))
        {
            return Err(Error::InvalidArgument(format!(
                "sampling box side {i} is invalid: [{}, {}]",
                low[i], high[i]
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive, got {dt}"
            )));
        }
        Ok(Self {
            count,
            low,
            high,
            dt,
            seed,
        })
    }

    /// The same box `[low, high]` on every one of `n` coordinates.
    pub fn cube(count: usize, n: usize, low: f64, high: f64, dt: f64, seed: u64) -> Result<Self> {
        Self::new(count, vec![low; n], vec![high; n], dt, seed)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dimension(&self) -> usize {
        self.low.len()
    }

    /// Initial conditions, one per row, drawn sequentially from the seed.
    pub fn draw(&self) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.dimension();
        let mut xs = DMatrix::zeros(self.count, n);
        for k in 0..self.count {
            for i in 0..n {
                let u: f64 = rng.random();
                xs[(k, i)] = self.low[i] + (self.high[i] - self.low[i]) * u;
            }
        }
        xs
    }
}

/// Draws `plan.count()` initial conditions and flows each for `plan.dt()`.
/// The equilibrium of the returned set is the origin.
pub fn generate_snapshots(
    system: &System,
    plan: &SamplingPlan,
    substeps: usize,
) -> Result<SnapshotSet> {
    if plan.dimension() != system.dimension() {
        return Err(Error::DimensionMismatch {
            context: "sampling box vs system dimension",
            expected: system.dimension(),
            found: plan.dimension(),
        });
    }
    let xs = plan.draw();
    let mut ys = DMatrix::zeros(xs.nrows(), xs.ncols());
    let mut x0 = vec![0.0; xs.ncols()];
    for k in 0..xs.nrows() {
        for (i, v) in x0.iter_mut().enumerate() {
            *v = xs[(k, i)];
        }
        let y = rk4_flow(system, &x0, plan.dt(), substeps).map_err(|e| match e {
            Error::BlowUp { .. } => Error::BlowUp { sample: Some(k) },
            other => other,
        })?;
        for (i, v) in y.into_iter().enumerate() {
            ys[(k, i)] = v;
        }
    }
    SnapshotSet::new(xs, ys, Some(plan.dt()))
}

/// A scalar polynomial map `x ↦ Σ cᵢ xⁱ` with rational coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialMap {
    coefficients: Vec<Rational64>,
}

impl PolynomialMap {
    /// Coefficients in ascending powers.
    pub fn new(coefficients: Vec<Rational64>) -> Self {
        Self { coefficients }
    }

    pub fn coefficients(&self) -> &[Rational64] {
        &self.coefficients
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        self.coefficients
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * x + c.to_f64().unwrap_or(f64::NAN))
    }

    /// Applies the map to every point of a one-column matrix.
    pub fn snapshots(&self, xs: DMatrix<f64>) -> Result<SnapshotSet> {
        let ys = xs.map(|x| self.evaluate(x));
        SnapshotSet::new(xs, ys, None)
    }
}

/// The exact finite section of the composition operator of a 1D polynomial
/// map on a monomial basis.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMatrix {
    pub koopman: KoopmanMatrix,
    /// False when rational arithmetic overflowed and floats were used instead.
    pub exact: bool,
}

/// Column `j` holds the coefficients of `e_j ∘ p` on the basis, i.e. the
/// truncated expansion of `p(x)ʲ` reweighted by `β_j / β_i`.
pub fn exact_koopman_matrix_oracle(
    p: &PolynomialMap,
    basis: &MonomialBasis,
) -> Result<OracleMatrix> {
    if basis.dimension() != 1 {
        return Err(Error::InvalidArgument(
            "the composition oracle handles one-dimensional maps only".into(),
        ));
    }
    let d = basis.max_degree();
    let (powers, exact) = match rational_powers(p.coefficients(), d) {
        Some(rows) => (
            rows.iter()
                .map(|r| r.iter().map(|c| c.to_f64().unwrap_or(f64::NAN)).collect())
                .collect(),
            true,
        ),
        None => {
            log::warn!("rational overflow in composition oracle; using floating point");
            let coeffs: Vec<f64> = p
                .coefficients()
                .iter()
                .map(|c| c.to_f64().unwrap_or(f64::NAN))
                .collect();
            (float_powers(&coeffs, d), false)
        }
    };
    let w = basis.weights();
    let values = DMatrix::from_fn(d + 1, d + 1, |i, j| powers[j][i] * w[j] / w[i]);
    Ok(OracleMatrix {
        koopman: KoopmanMatrix::new(values, basis.clone(), Method::AnalyticEdmd)?,
        exact,
    })
}

/// `powers[j][i]` is the coefficient of `xⁱ` in `p(x)ʲ`, for `i, j ≤ d`.
fn rational_powers(p: &[Rational64], d: usize) -> Option<Vec<Vec<Rational64>>> {
    let mut out = Vec::with_capacity(d + 1);
    let mut cur = vec![Rational64::zero(); d + 1];
    cur[0] = Rational64::from_integer(1);
    out.push(cur.clone());
    for _ in 1..=d {
        let mut next = vec![Rational64::zero(); d + 1];
        for (a, ca) in cur.iter().enumerate() {
            if ca.is_zero() {
                continue;
            }
            for (b, cb) in p.iter().enumerate() {
                if a + b > d || cb.is_zero() {
                    continue;
                }
                let term = ca.checked_mul(cb)?;
                next[a + b] = next[a + b].checked_add(&term)?;
            }
        }
        out.push(next.clone());
        cur = next;
    }
    Some(out)
}

fn float_powers(p: &[f64], d: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(d + 1);
    let mut cur = vec![0.0; d + 1];
    cur[0] = 1.0;
    out.push(cur.clone());
    for _ in 1..=d {
        let mut next = vec![0.0; d + 1];
        for (a, ca) in cur.iter().enumerate() {
            for (b, cb) in p.iter().enumerate() {
                if a + b <= d {
                    next[a + b] += ca * cb;
                }
            }
        }
        out.push(next.clone());
        cur = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn rat(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    #[test]
    fn scalar_linear_decay() {
        let sys = System::LinearDiagonal(vec![-1.0]);
        let x = rk4_flow(&sys, &[1.0], 1.0, 100).unwrap();
        assert!((x[0] - (-1f64).exp()).abs() < 1e-8);
        let still = System::LinearDiagonal(vec![0.0]);
        assert_eq!(rk4_flow(&still, &[0.7], 1.0, 10).unwrap(), vec![0.7]);
    }

    #[test]
    fn cubic_matches_fine_reference() {
        let fine = rk4_flow(&System::Cubic1D, &[0.5], 0.5, 10_000).unwrap()[0];
        let coarse = rk4_flow(&System::Cubic1D, &[0.5], 0.5, 100).unwrap()[0];
        assert!((fine - coarse).abs() < 1e-8);
        // closed form: x(t)² = x0² e^{2t} / (1 − x0² + x0² e^{2t})
        let e = 1f64.exp();
        let exact = (0.25 * e / (0.75 + 0.25 * e)).sqrt();
        assert!((fine - exact).abs() < 1e-12);
    }

    #[test]
    fn rotating_polar_rates() {
        let (r0, h) = (0.5f64, 1e-3);
        let x = rk4_flow(&System::Rotating2D, &[r0, 0.0], h, 1).unwrap();
        let r = x[0].hypot(x[1]);
        let theta = x[1].atan2(x[0]);
        // ṙ = −r ⇒ r(h) = r0 e^{−h};  θ̇ = r² ⇒ θ(h) = r0²(1 − e^{−2h})/2
        assert!((r - r0 * (-h).exp()).abs() < 1e-12);
        let expected_theta = r0 * r0 * (1.0 - (-2.0 * h).exp()) / 2.0;
        assert!((theta - expected_theta).abs() < 1e-12);
    }

    #[test]
    fn numerical_jacobians() {
        let close = |a: &[C64], b: &[C64]| a.iter().zip(b).all(|(x, y)| (x - y).norm() < 1e-8);
        for sys in [System::Cubic1D, System::VanDerPol, System::Rotating2D] {
            let at = &sys.known_equilibria()[0];
            assert!(close(
                &sys.jacobian_eigenvalues(at),
                &sys.known_jacobian_eigs().unwrap()
            ));
        }
        let stable = System::Cubic1D.jacobian_eigenvalues(&[1.0]);
        assert!((stable[0].re + 2.0).abs() < 1e-8);
    }

    #[test]
    fn equilibria_are_fixed() {
        for sys in [
            System::Cubic1D,
            System::VanDerPol,
            System::Rotating2D,
            System::LinearDiagonal(vec![-1.0, 2.0]),
        ] {
            for eq in sys.known_equilibria() {
                let mut f = vec![0.0; eq.len()];
                sys.eval(&eq, &mut f);
                assert!(f.iter().all(|v| v.abs() <= 1e-12));
                let y = rk4_flow(&sys, &eq, 1.0, 100).unwrap();
                for (a, b) in y.iter().zip(&eq) {
                    assert!((a - b).abs() <= 1e-12, "{sys:?} at {eq:?}");
                }
            }
        }
    }

    #[test]
    fn blow_up_is_reported_with_sample() {
        let sys = System::custom("quadratic", 1, vec![vec![0.0]], |x, o| o[0] = x[0] * x[0]);
        assert!(matches!(
            rk4_flow(&sys, &[10.0], 5.0, 50),
            Err(Error::BlowUp { sample: None })
        ));
        let plan = SamplingPlan::new(3, vec![10.0], vec![10.0], 5.0, 1).unwrap();
        assert!(matches!(
            generate_snapshots(&sys, &plan, 50),
            Err(Error::BlowUp { sample: Some(0) })
        ));
    }

    #[test]
    fn cubic_interval_is_invariant() {
        let plan = SamplingPlan::new(20, vec![0.0], vec![1.0], 0.5, 7).unwrap();
        let data = generate_snapshots(&System::Cubic1D, &plan, default_substeps(0.5)).unwrap();
        assert_eq!(data.len(), 20);
        assert!(data.ys().iter().all(|&y| y > 0.0 && y <= 1.0));
    }

    #[test]
    fn degenerate_box_gives_fixed_point() {
        let plan = SamplingPlan::new(1, vec![0.0], vec![0.0], 0.5, 3).unwrap();
        let data = generate_snapshots(&System::Cubic1D, &plan, 50).unwrap();
        assert_eq!(data.xs()[(0, 0)], 0.0);
        assert_eq!(data.ys()[(0, 0)], 0.0);
    }

    #[test]
    fn van_der_pol_sampling_is_finite() {
        let plan = SamplingPlan::cube(250, 2, -1.0, 1.0, 0.5, 11).unwrap();
        let data = generate_snapshots(&System::VanDerPol, &plan, default_substeps(0.5)).unwrap();
        assert_eq!(data.len(), 250);
        assert!(data.ys().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sampling_is_deterministic() {
        let plan = SamplingPlan::cube(30, 2, -1.0, 1.0, 1.0, 42).unwrap();
        let a = generate_snapshots(&System::VanDerPol, &plan, 100).unwrap();
        let b = generate_snapshots(&System::VanDerPol, &plan, 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn plan_validation() {
        assert!(SamplingPlan::new(0, vec![0.0], vec![1.0], 1.0, 0).is_err());
        assert!(SamplingPlan::new(1, vec![1.0], vec![0.0], 1.0, 0).is_err());
        assert!(SamplingPlan::new(1, vec![0.0], vec![1.0], 0.0, 0).is_err());
        assert!(SamplingPlan::new(1, vec![0.0], vec![1.0, 2.0], 1.0, 0).is_err());
    }

    #[test]
    fn substep_defaults() {
        assert_eq!(default_substeps(1.0), 100);
        assert_eq!(default_substeps(0.5), 50);
        assert_eq!(default_substeps(2.0), 200);
        assert_eq!(default_substeps(0.001), 1);
    }

    #[test]
    fn system_parsing() {
        assert!(matches!(
            "cubic1d".parse::<System>().unwrap(),
            System::Cubic1D
        ));
        assert!(matches!(
            "VanDerPol".parse::<System>().unwrap(),
            System::VanDerPol
        ));
        match "linear:-1,0.5".parse::<System>().unwrap() {
            System::LinearDiagonal(a) => assert_eq!(a, vec![-1.0, 0.5]),
            other => panic!("{other:?}"),
        }
        assert!("lorenz".parse::<System>().is_err());
        assert_eq!(
            System::Rotating2D.name().parse::<System>().unwrap().name(),
            "rotating2d"
        );
    }

    #[test]
    fn oracle_linear_map_is_diagonal() {
        let basis = MonomialBasis::new(1, 3).unwrap();
        let o =
            exact_koopman_matrix_oracle(&PolynomialMap::new(vec![rat(0, 1), rat(1, 2)]), &basis)
                .unwrap();
        assert!(o.exact);
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, 0.25, 0.125]));
        assert_eq!(o.koopman.values(), &expected);
    }

    #[test]
    fn oracle_square_map() {
        let basis = MonomialBasis::new(1, 4).unwrap();
        let o = exact_koopman_matrix_oracle(
            &PolynomialMap::new(vec![rat(0, 1), rat(0, 1), rat(1, 1)]),
            &basis,
        )
        .unwrap();
        let k = o.koopman.values();
        assert_eq!(k[(0, 0)], 1.0);
        assert_eq!(k[(2, 1)], 1.0);
        assert_eq!(k[(4, 2)], 1.0);
        assert_eq!(k.column(3).iter().filter(|v| **v != 0.0).count(), 0);
        assert_eq!(k.column(4).iter().filter(|v| **v != 0.0).count(), 0);
        assert_eq!(k.iter().filter(|v| **v != 0.0).count(), 3);
    }

    #[test]
    fn oracle_hand_expansion() {
        let basis = MonomialBasis::new(1, 3).unwrap();
        let p = PolynomialMap::new(vec![rat(0, 1), rat(1, 2), rat(1, 10)]);
        let k = exact_koopman_matrix_oracle(&p, &basis).unwrap().koopman;
        assert!((k.values()[(2, 2)] - 0.25).abs() < 1e-15);
        assert!((k.values()[(3, 2)] - 0.1).abs() < 1e-15);
        assert!((k.values()[(2, 1)] - 0.1).abs() < 1e-15);
        assert_eq!(p.evaluate(1.0), 0.6);
    }

    #[test]
    fn oracle_overflow_falls_back() {
        let basis = MonomialBasis::new(1, 12).unwrap();
        let p = PolynomialMap::new(vec![rat(0, 1), rat(1, 999_983), rat(7, 999_979)]);
        let o = exact_koopman_matrix_oracle(&p, &basis).unwrap();
        assert!(!o.exact);
        assert!(o.koopman.values().iter().all(|v| v.is_finite()));
    }
}
