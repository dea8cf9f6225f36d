//! Dense helpers on top of nalgebra that the public modules share.

use nalgebra::{Complex, DMatrix, DVector};

pub(crate) type C64 = Complex<f64>;

/// Thin SVD with singular values sorted in descending order.
pub(crate) struct SortedSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub(crate) fn sorted_svd(a: &DMatrix<f64>) -> SortedSvd {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    SortedSvd {
        u: DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]),
        s: DVector::from_fn(order.len(), |c, _| s[order[c]]),
        v: DMatrix::from_fn(v_t.ncols(), order.len(), |r, c| v_t[(order[c], r)]),
    }
}

/// Minimum-norm least-squares solution of `a · x ≈ b`; singular values below
/// `rtol · s_max` are discarded.
pub(crate) fn lstsq_min_norm(a: &DMatrix<f64>, b: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let svd = sorted_svd(a);
    let smax = svd.s.iter().copied().fold(0.0, f64::max);
    let cut = rtol * smax;
    let mut utb = svd.u.transpose() * b;
    for (i, &s) in svd.s.iter().enumerate() {
        let scale = if s > cut && s > 0.0 { 1.0 / s } else { 0.0 };
        utb.row_mut(i).scale_mut(scale);
    }
    &svd.v * utb
}

/// Largest over smallest singular value of a complex square matrix.
pub(crate) fn condition_number(a: &DMatrix<C64>) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    let s = a.clone().singular_values();
    let max = s.iter().copied().fold(0.0, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `a x = b` for square complex `a`. If the condition number exceeds
/// `threshold`, falls back to the spectrally truncated least-squares solution
/// (singular values below `s_max / threshold` dropped). Returns the solution,
/// the condition number, and whether the fallback was taken.
pub(crate) fn solve_guarded(
    a: &DMatrix<C64>,
    b: &DVector<C64>,
    threshold: f64,
) -> (DVector<C64>, f64, bool) {
    let svd = a.clone().svd(true, true);
    let s = &svd.singular_values;
    let max = s.iter().copied().fold(0.0, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    let cond = if min == 0.0 { f64::INFINITY } else { max / min };
    let fallback = !(cond <= threshold);
    if !fallback {
        if let Some(x) = a.clone().lu().solve(b) {
            if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                return (x, cond, false);
            }
        }
    }
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V");
    let cut = max / threshold;
    let mut utb = u.adjoint() * b;
    for (i, &sv) in s.iter().enumerate() {
        utb[i] = if sv > cut && sv > 0.0 {
            utb[i] / sv
        } else {
            C64::new(0.0, 0.0)
        };
    }
    (v_t.adjoint() * utb, cond, true)
}

/// Right singular vectors of the `k` smallest singular values of `a`, as
/// columns of an orthonormal matrix.
pub(crate) fn smallest_right_singular_vectors(a: &DMatrix<C64>, k: usize) -> DMatrix<C64> {
    let n = a.ncols();
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
    DMatrix::from_fn(n, k, |r, c| v_t[(order[c], r)].conj())
}

/// Real matrix to complex.
pub(crate) fn complexify(a: &DMatrix<f64>) -> DMatrix<C64> {
    a.map(|x| C64::new(x, 0.0))
}

/// Eigenvalues of a real square matrix, ordered by descending real part then
/// descending imaginary part.
pub(crate) fn sorted_eigenvalues(a: &DMatrix<f64>) -> Vec<C64> {
    if a.is_empty() {
        return Vec::new();
    }
    if a.nrows() == 1 {
        return vec![C64::new(a[(0, 0)], 0.0)];
    }
    let mut eigs: Vec<C64> = a.clone().complex_eigenvalues().iter().copied().collect();
    // Schur returns conjugate pairs up to round-off; snap them so that pairs
    // stay exactly conjugate.
    snap_conjugates(&mut eigs);
    eigs.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    eigs
}

fn snap_conjugates(eigs: &mut [C64]) {
    let scale = eigs
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let tiny = 1e-14 * scale;
    for z in eigs.iter_mut() {
        if z.im.abs() <= tiny {
            z.im = 0.0;
        }
    }
    let mut used = vec![false; eigs.len()];
    for i in 0..eigs.len() {
        if used[i] || eigs[i].im <= 0.0 {
            continue;
        }
        let target = eigs[i].conj();
        let partner = (0..eigs.len())
            .filter(|&j| j != i && !used[j] && eigs[j].im < 0.0)
            .min_by(|&a, &b| {
                (eigs[a] - target)
                    .norm()
                    .total_cmp(&(eigs[b] - target).norm())
            });
        if let Some(j) = partner {
            let re = 0.5 * (eigs[i].re + eigs[j].re);
            let im = 0.5 * (eigs[i].im - eigs[j].im);
            eigs[i] = C64::new(re, im);
            eigs[j] = C64::new(re, -im);
            used[i] = true;
            used[j] = true;
        }
    }
}
