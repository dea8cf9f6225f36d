use analytic_edmd::dynamics::default_substeps;
use analytic_edmd::kernel::gram_matrix;
use analytic_edmd::spectral::principal_eigenfunctions;
use analytic_edmd::{
    block_eigenvalues, enumerate_multiindices, fit_analytic_edmd, fit_analytic_edmd_nonortho,
    fit_edmd, generate_snapshots, lattice_match, rk4_flow, taylor_project, taylor_project_nonortho,
    Complex, DMatrix, DVector, InversionPolicy, KernelFamily, KernelSpec, KoopmanMatrix, Method,
    MonomialBasis, SampledFunction, SamplingPlan, SnapshotSet, System,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SZEGO: KernelFamily = KernelFamily::SzegoPolydisc;

fn binomial(n: usize, k: usize) -> usize {
    (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
}

fn random_points(rng: &mut ChaCha8Rng, m: usize, n: usize, r: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| rng.random_range(-r..r))
}

/// Random orthogonal matrix from the QR of a Gaussian-ish matrix.
fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    a.qr().q()
}

/// Exactly block-lower-triangular K whose degree-r block has eigenvalues
/// near `0.5^r` (degree 1 optionally a rotation-scaling pair).
fn triangular_koopman(seed: u64, n: usize, d: usize, rotate: bool) -> KoopmanMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = MonomialBasis::new(n, d).unwrap();
    let blocks = basis.degree_offsets();
    let mut k = DMatrix::zeros(basis.len(), basis.len());
    for (r, blk) in blocks.iter().enumerate() {
        let diag = if r == 1 && rotate && n == 2 {
            let (a, t) = (0.6, rng.random_range(0.3..1.2f64));
            DMatrix::from_row_slice(2, 2, &[a * t.cos(), -a * t.sin(), a * t.sin(), a * t.cos()])
        } else {
            let q = random_orthogonal(&mut rng, blk.size);
            let scale = 0.5f64.powi(r as i32);
            let spectrum = DVector::from_fn(blk.size, |_, _| scale * rng.random_range(0.8..1.2));
            &q * DMatrix::from_diagonal(&spectrum) * q.transpose()
        };
        k.view_mut((blk.start, blk.start), (blk.size, blk.size))
            .copy_from(&diag);
        for s in blocks.iter().take(r) {
            let off = DMatrix::from_fn(blk.size, s.size, |_, _| rng.random_range(-0.3..0.3));
            k.view_mut((blk.start, s.start), (blk.size, s.size))
                .copy_from(&off);
        }
    }
    KoopmanMatrix::new(k, basis, Method::AnalyticEdmd).unwrap()
}

/// Greedy multiset match of two complex lists; returns the worst pairing distance.
fn multiset_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (j, dist) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        used[j] = true;
        worst = worst.max(dist);
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn multiindex_counts_and_order(n in 1usize..=4, d in 0usize..=8) {
        let idx = enumerate_multiindices(n, d).unwrap();
        prop_assert_eq!(idx.len(), binomial(n + d, d));
        prop_assert!(idx.windows(2).all(|w| w[0].total_degree() <= w[1].total_degree()));
        let mut sorted: Vec<Vec<u32>> = idx.iter().map(|a| a.exponents().to_vec()).collect();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), idx.len());
        if d > 0 {
            let shorter = enumerate_multiindices(n, d - 1).unwrap();
            prop_assert_eq!(&idx[..shorter.len()], &shorter[..]);
        }
    }

    #[test]
    fn basis_at_origin_is_first_unit_row(n in 1usize..=3, d in 0usize..=5) {
        for basis in [MonomialBasis::new(n, d).unwrap(), MonomialBasis::exponential(n, d).unwrap()] {
            let row = basis.evaluate(&DMatrix::zeros(1, n)).unwrap();
            prop_assert_eq!(row[(0, 0)], basis.weights()[0]);
            prop_assert!(row.iter().skip(1).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn kernel_is_symmetric(seed in any::<u64>(), n in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for family in [SZEGO, KernelFamily::Exponential] {
            let spec = KernelSpec::centered(family, n).unwrap();
            for _ in 0..1000 / 32 {
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-0.95..0.95)).collect();
                let y: Vec<f64> = (0..n).map(|_| rng.random_range(-0.95..0.95)).collect();
                prop_assert_eq!(spec.kernel_eval(&x, &y).unwrap(), spec.kernel_eval(&y, &x).unwrap());
            }
        }
    }

    #[test]
    fn gram_is_symmetric_psd(seed in any::<u64>(), m in 1usize..=50, n in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, m, n, 0.95);
        for family in [SZEGO, KernelFamily::Exponential] {
            let g = gram_matrix(&KernelSpec::centered(family, n).unwrap(), &pts).unwrap();
            prop_assert_eq!(g.values(), &g.values().transpose());
            let lmax = g.eigenvalues().max();
            prop_assert!(g.eigenvalues().min() >= -1e-10 * lmax);
        }
    }

    #[test]
    fn gram_translation_is_exact(seed in any::<u64>(), m in 1usize..=20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let center = DVector::from_fn(2, |_, _| rng.random_range(-0.5..0.5));
        let pts = DMatrix::from_fn(m, 2, |_, j| center[j] + rng.random_range(-0.9..0.9));
        let shifted = DMatrix::from_fn(m, 2, |i, j| pts[(i, j)] - center[j]);
        let a = gram_matrix(&KernelSpec::new(SZEGO, center).unwrap(), &pts).unwrap();
        let b = gram_matrix(&KernelSpec::centered(SZEGO, 2).unwrap(), &shifted).unwrap();
        prop_assert_eq!(a.values(), b.values());
    }

    #[test]
    fn projection_is_linear(seed in any::<u64>(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // stratified samples keep the instance well conditioned
        let pts = DMatrix::from_fn(6, 1, |k, _| -0.9 + 0.3 * (k as f64 + rng.random_range(0.2..0.8)));
        let gram = gram_matrix(&KernelSpec::centered(SZEGO, 1).unwrap(), &pts).unwrap();
        let basis = MonomialBasis::new(1, 3).unwrap();
        let f = SampledFunction::from_fn(pts.clone(), |x| x[0].sin()).unwrap();
        let g = SampledFunction::from_fn(pts.clone(), |x| (0.5 * x[0]).exp()).unwrap();
        let combo = SampledFunction::new(pts, f.values() * a + g.values() * b).unwrap();
        let p = InversionPolicy::default();
        let cf = taylor_project(&f, &basis, &gram, p).unwrap();
        let cg = taylor_project(&g, &basis, &gram, p).unwrap();
        let cc = taylor_project(&combo, &basis, &gram, p).unwrap();
        let expected = cf.coefficients() * a + cg.coefficients() * b;
        let scale = (cf.coefficients().abs() * a.abs() + cg.coefficients().abs() * b.abs()).amax();
        let dev = (cc.coefficients() - &expected).amax();
        prop_assert!(dev <= 1e-12 * scale, "deviation {dev:e} scale {scale}");
    }

    #[test]
    fn oblique_projection_recovers_polynomials(seed in any::<u64>(), extra in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = MonomialBasis::new(2, 2).unwrap();
        let pts = random_points(&mut rng, basis.len() + 4 + extra, 2, 0.8);
        let gram = gram_matrix(&KernelSpec::centered(SZEGO, 2).unwrap(), &pts).unwrap();
        let coeffs = DVector::from_fn(basis.len(), |_, _| rng.random_range(-1.0..1.0));
        let values = basis.evaluate(&pts).unwrap() * &coeffs;
        let f = SampledFunction::new(pts.clone(), values).unwrap();
        let c = taylor_project_nonortho(&f, &basis, &gram, InversionPolicy::default()).unwrap();
        prop_assert!((c.coefficients() - &coeffs).norm() <= 1e-6 * coeffs.norm());

        // idempotence: re-project the reconstructed polynomial
        let again = SampledFunction::new(pts, basis.evaluate(gram.points()).unwrap() * c.coefficients()).unwrap();
        let c2 = taylor_project_nonortho(&again, &basis, &gram, InversionPolicy::default()).unwrap();
        prop_assert!((c2.coefficients() - c.coefficients()).norm() <= 1e-6 * coeffs.norm());
    }

    #[test]
    fn square_case_methods_agree(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = MonomialBasis::new(1, 4).unwrap();
        let xs: Vec<f64> = {
            let mut v: Vec<f64> = (0..5).map(|k| -0.8 + 0.4 * k as f64 + rng.random_range(-0.1..0.1)).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let ys: Vec<f64> = xs.iter().map(|x| 0.7 * x - 0.2 * x * x).collect();
        let data = SnapshotSet::new(DMatrix::from_column_slice(5, 1, &xs), DMatrix::from_column_slice(5, 1, &ys), None).unwrap();
        let a = fit_analytic_edmd_nonortho(&data, &basis, SZEGO, InversionPolicy::default()).unwrap();
        let e = fit_edmd(&data, &basis).unwrap();
        let scale = e.values().amax();
        prop_assert!((a.values() - e.values()).amax() <= 1e-8 * scale);
    }

    #[test]
    fn linear_maps_give_diagonal_k(seed in any::<u64>(), a in -0.9..0.9f64, b in -0.9..0.9f64, extra in 0usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = MonomialBasis::new(2, 2).unwrap();
        let xs = random_points(&mut rng, basis.len() + extra, 2, 0.9);
        let ys = DMatrix::from_fn(xs.nrows(), 2, |i, j| [a, b][j] * xs[(i, j)]);
        let data = SnapshotSet::new(xs, ys, None).unwrap();
        let k = fit_analytic_edmd_nonortho(&data, &basis, SZEGO, InversionPolicy::default()).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_iterator(
            basis.len(),
            basis.indices().iter().map(|al| a.powi(al.exponents()[0] as i32) * b.powi(al.exponents()[1] as i32)),
        ));
        prop_assert!((k.values() - expected).amax() <= 1e-6);
    }

    #[test]
    fn translation_happens_once(seed in any::<u64>(), shift in -0.3..0.3f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = DMatrix::from_fn(12, 1, |_, _| shift + rng.random_range(-0.6..0.6));
        let ys = xs.map(|x| shift + 0.5 * (x - shift));
        let eq = DVector::from_element(1, shift);
        let data = SnapshotSet::with_equilibrium(xs.clone(), ys.clone(), None, eq).unwrap();
        let (zx, zy) = data.translated();
        let centered = SnapshotSet::new(zx, zy, None).unwrap();
        let basis = MonomialBasis::new(1, 3).unwrap();
        let a = fit_analytic_edmd(&data, &basis, SZEGO, InversionPolicy::default()).unwrap();
        let b = fit_analytic_edmd(&centered, &basis, SZEGO, InversionPolicy::default()).unwrap();
        prop_assert_eq!(a.values(), b.values());
    }

    #[test]
    fn block_spectrum_is_full_spectrum(seed in any::<u64>(), rotate in any::<bool>()) {
        let k = triangular_koopman(seed, 2, 3, rotate);
        let blocks: Vec<Complex<f64>> = block_eigenvalues(&k, None).iter().map(|e| e.mu).collect();
        let full: Vec<Complex<f64>> = k.values().clone().complex_eigenvalues().iter().copied().collect();
        prop_assert!(multiset_distance(&blocks, &full) <= 1e-10);
    }

    #[test]
    fn recursion_solves_eigen_equation(seed in any::<u64>(), rotate in any::<bool>()) {
        let k = triangular_koopman(seed, 2, 4, rotate);
        let kc = k.values().map(|v| Complex::new(v, 0.0));
        for ef in principal_eigenfunctions(&k) {
            prop_assume!(!ef.is_resonant());
            let v = ef.coefficients.coefficients();
            let residual = (&kc * v - v * ef.mu).norm();
            prop_assert!(residual <= 1e-8 * v.norm(), "residual {residual}");
            prop_assert_eq!(v[0], Complex::new(0.0, 0.0));
        }
    }

    #[test]
    fn conjugate_pairs_have_conjugate_eigenfunctions(seed in any::<u64>()) {
        let k = triangular_koopman(seed, 2, 4, true);
        let efs = principal_eigenfunctions(&k);
        prop_assert_eq!(efs.len(), 2);
        prop_assert_eq!(efs[0].mu, efs[1].mu.conj());
        let a = efs[0].coefficients.coefficients();
        let b = efs[1].coefficients.coefficients();
        let worst = a.iter().zip(b.iter()).map(|(x, y)| (x - y.conj()).norm()).fold(0.0, f64::max);
        prop_assert!(worst <= 1e-10, "{worst}");
    }

    #[test]
    fn exp_log_round_trip(seed in any::<u64>(), dt in 0.05..3.0f64) {
        let k = triangular_koopman(seed, 2, 3, true);
        for e in block_eigenvalues(&k, Some(dt)) {
            let l = e.lambda.unwrap();
            prop_assert!(((l * dt).exp() - e.mu).norm() <= 1e-12 * e.mu.norm());
        }
    }

    #[test]
    fn exact_lattice_matches_itself(l1 in -2.0..-0.1f64, l2 in -2.0..-0.1f64) {
        let mut diag = Vec::new();
        let basis = MonomialBasis::new(2, 3).unwrap();
        for alpha in basis.indices() {
            let e = alpha.exponents();
            diag.push((e[0] as f64 * l1 + e[1] as f64 * l2).exp());
        }
        let k = KoopmanMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(diag)), basis, Method::AnalyticEdmd).unwrap();
        let report = lattice_match(&block_eigenvalues(&k, Some(1.0)), 1e-9);
        prop_assert!(report.unmatched.is_empty());
        prop_assert!(report.max_error().unwrap() <= 1e-12);
    }

    #[test]
    fn rk4_is_fourth_order(x0 in 0.3..0.9f64, y0 in -0.9..-0.3f64) {
        for (sys, start) in [
            (System::Cubic1D, vec![x0]),
            (System::VanDerPol, vec![x0, y0]),
            (System::Rotating2D, vec![x0, y0]),
        ] {
            let reference = rk4_flow(&sys, &start, 1.0, 4096).unwrap();
            let err = |steps| {
                let x = rk4_flow(&sys, &start, 1.0, steps).unwrap();
                x.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            };
            let ratio = err(64) / err(128);
            prop_assert!((14.0..=18.0).contains(&ratio), "{sys:?} ratio {ratio}");
        }
    }

    #[test]
    fn sampling_is_deterministic(seed in any::<u64>(), m in 1usize..40) {
        let plan = SamplingPlan::cube(m, 2, -1.0, 1.0, 0.5, seed).unwrap();
        let a = generate_snapshots(&System::VanDerPol, &plan, default_substeps(0.5)).unwrap();
        let b = generate_snapshots(&System::VanDerPol, &plan, default_substeps(0.5)).unwrap();
        prop_assert_eq!(a, b);
    }
}
