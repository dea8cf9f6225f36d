//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use analytic_edmd::dynamics::{default_substeps, exact_koopman_matrix_oracle, PolynomialMap};
use analytic_edmd::edmd::KernelSectionBasis;
use analytic_edmd::kernel::{cross_gram_matrix, gram_matrix};
use analytic_edmd::spectral::principal_eigenfunctions;
use analytic_edmd::{
    block_eigenvalues, enumerate_multiindices, evaluate_eigenfunction, fit_analytic_edmd,
    fit_analytic_edmd_nonortho, fit_edmd, generate_snapshots, lattice_match, rk4_flow,
    taylor_project, triangularity_residual, Complex, DMatrix, DVector, InversionPolicy,
    KernelFamily, KernelSpec, MonomialBasis, SampledFunction, SamplingPlan, SnapshotSet, System,
};
use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SZEGO: KernelFamily = KernelFamily::SzegoPolydisc;
const SEEDS: std::ops::RangeInclusive<u64> = 1..=20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within_budget(elapsed: Duration, budget: Duration) -> bool {
    elapsed <= budget
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn policy() -> InversionPolicy {
    InversionPolicy::default()
}

/// Log-Taylor coefficients from 10 samples, median error over seeds.
fn criterion_1() -> Outcome {
    let start = Instant::now();
    let exact = [0.0, 1.0, -0.5, 1.0 / 3.0, -0.25, 0.2];
    let basis = MonomialBasis::new(1, 5).unwrap();
    let mut errors: Vec<Vec<f64>> = vec![Vec::new(); 6];
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = DMatrix::from_fn(10, 1, |_, _| rng.random_range(-0.95..0.95));
        let gram = gram_matrix(&KernelSpec::centered(SZEGO, 1).unwrap(), &pts).unwrap();
        let f = SampledFunction::from_fn(pts, |x| (1.0 + x[0]).ln()).unwrap();
        let c = taylor_project(&f, &basis, &gram, policy()).unwrap();
        for (i, e) in exact.iter().enumerate() {
            errors[i].push((c.coefficients()[i] - e).abs());
        }
    }
    let med: Vec<f64> = errors.into_iter().map(median).collect();
    let elapsed = start.elapsed();
    let pass = med[..4].iter().all(|&e| e <= 1e-2)
        && med[4..].iter().all(|&e| e <= 5e-2)
        && within_budget(elapsed, Duration::from_secs(1));
    let shown: Vec<String> = med.iter().map(|e| format!("{e:.1e}")).collect();
    outcome(
        pass,
        format!(
            "median |err| by degree [{}], {elapsed:.2?}",
            shown.join(", ")
        ),
    )
}

fn cubic_data(seed: u64) -> SnapshotSet {
    let plan = SamplingPlan::new(20, vec![0.0], vec![0.95], 0.5, seed).unwrap();
    generate_snapshots(&System::Cubic1D, &plan, default_substeps(0.5)).unwrap()
}

/// Degree-r eigenvalue λ_r of a 1D fit, for r = 1..=4.
fn cubic_lambdas(data: &SnapshotSet) -> Vec<f64> {
    let basis = MonomialBasis::new(1, 4).unwrap();
    let k = fit_analytic_edmd(data, &basis, SZEGO, policy()).unwrap();
    block_eigenvalues(&k, data.dt())
        .into_iter()
        .filter(|e| e.degree >= 1)
        .map(|e| e.lambda.map_or(f64::NAN, |l| l.re))
        .collect()
}

fn lattice_seeds(equilibrium: f64, target: impl Fn(usize) -> f64) -> (usize, Vec<String>) {
    let mut good = 0;
    let mut misses = Vec::new();
    for seed in SEEDS {
        let data = cubic_data(seed)
            .at_equilibrium(DVector::from_element(1, equilibrium))
            .unwrap();
        let lambdas = cubic_lambdas(&data);
        let ok = lambdas
            .iter()
            .enumerate()
            .all(|(i, l)| ((l - target(i + 1)) / target(i + 1)).abs() <= 0.05);
        if ok {
            good += 1;
        } else {
            let shown: Vec<String> = lambdas.iter().map(|l| format!("{l:.3}")).collect();
            misses.push(format!("seed {seed}: [{}]", shown.join(", ")));
        }
    }
    (good, misses)
}

/// Unstable lattice {1, 2, 3, 4} at the origin.
fn criterion_2() -> Outcome {
    let start = Instant::now();
    let (good, misses) = lattice_seeds(0.0, |j| j as f64);
    let elapsed = start.elapsed();
    let per_run = elapsed / 20;
    let pass = good >= 18 && within_budget(per_run, Duration::from_secs(1));
    let mut detail = format!("{good}/20 seeds within 5% of {{1,2,3,4}}, {per_run:.2?} per run");
    if !misses.is_empty() {
        detail.push_str(&format!("; misses: {}", misses.join("; ")));
    }
    outcome(pass, detail)
}

/// Stable lattice {−2, −4, −6, −8} at x* = 1.
fn criterion_3() -> Outcome {
    let (good, misses) = lattice_seeds(1.0, |j| -2.0 * j as f64);
    let mut detail = format!("{good}/20 seeds within 5% of {{-2,-4,-6,-8}}");
    if !misses.is_empty() {
        detail.push_str(&format!("; misses: {}", misses.join("; ")));
    }
    outcome(good >= 18, detail)
}

/// Rescaled protocol: data over `[−1, 1]ⁿ`, fitted on `ρ·x`.
fn rescaled_data(system: &System, m: usize, dt: f64, seed: u64) -> SnapshotSet {
    let plan = SamplingPlan::cube(m, system.dimension(), -1.0, 1.0, dt, seed).unwrap();
    let data = generate_snapshots(system, &plan, default_substeps(dt)).unwrap();
    data.rescaled(RESCALE).unwrap()
}

const RESCALE: f64 = 0.5;
const PROTOCOL_SEED: u64 = 1;

/// Number of spurious eigenvalues for a Van der Pol run at `seed`.
fn vdp_spurious(seed: u64) -> usize {
    let data = rescaled_data(&System::VanDerPol, 50, 1.0, seed);
    let basis = MonomialBasis::new(2, 3).unwrap();
    let k = fit_analytic_edmd(&data, &basis, SZEGO, policy()).unwrap();
    lattice_match(&block_eigenvalues(&k, data.dt()), 0.1)
        .unmatched
        .len()
}

/// Van der Pol principal pair and absence of spurious eigenvalues.
fn criterion_4() -> Outcome {
    let start = Instant::now();
    let data = rescaled_data(&System::VanDerPol, 50, 1.0, PROTOCOL_SEED);
    let basis = MonomialBasis::new(2, 3).unwrap();
    let k = fit_analytic_edmd(&data, &basis, SZEGO, policy()).unwrap();
    let eigs = block_eigenvalues(&k, data.dt());
    let target = Complex::new(-0.5, 3f64.sqrt() / 2.0);
    let linear: Vec<Complex<f64>> = eigs
        .iter()
        .filter(|e| e.degree == 1)
        .filter_map(|e| e.lambda)
        .collect();
    let pair_ok = linear.len() == 2
        && linear.iter().any(|l| (l - target).norm() <= 2e-2)
        && linear.iter().any(|l| (l - target.conj()).norm() <= 2e-2);
    let report = lattice_match(&eigs, 0.1);
    let constant_ok = eigs
        .iter()
        .filter(|e| e.degree == 0)
        .all(|e| e.lambda.is_some_and(|l| l.norm() <= 0.1));
    let spurious = report.unmatched.len();
    let elapsed = start.elapsed();
    let pass =
        pair_ok && spurious == 0 && constant_ok && within_budget(elapsed, Duration::from_secs(5));
    let shown: Vec<String> = linear
        .iter()
        .map(|l| format!("{:.4}{:+.4}i", l.re, l.im))
        .collect();
    // informational: how often the no-spurious check holds across seeds
    let clean = (1..=10).filter(|&s| vdp_spurious(s) == 0).count();
    outcome(
        pass,
        format!(
            "seed {PROTOCOL_SEED}, ρ = {RESCALE}: degree-1 λ [{}], max lattice error {:.2e}, {spurious} spurious, {elapsed:.2?} (seeds 1-10 without spurious: {clean}/10)",
            shown.join(", "),
            report.max_error().unwrap_or(f64::NAN)
        ),
    )
}

/// Rotating dynamics: repeated λ = −1 and two principal eigenfunctions.
fn criterion_5() -> Outcome {
    let data = rescaled_data(&System::Rotating2D, 50, 2.0, PROTOCOL_SEED);
    let basis = MonomialBasis::new(2, 6).unwrap();
    let k = fit_analytic_edmd(&data, &basis, SZEGO, policy()).unwrap();
    let eigs = block_eigenvalues(&k, data.dt());
    let linear: Vec<Complex<f64>> = eigs
        .iter()
        .filter(|e| e.degree == 1)
        .filter_map(|e| e.lambda)
        .collect();
    let lambda_ok = linear.len() == 2
        && linear
            .iter()
            .all(|l| (l - Complex::new(-1.0, 0.0)).norm() <= 5e-2);
    let efs = principal_eigenfunctions(&k);
    let origin = DMatrix::from_row_slice(1, 2, data.equilibrium().as_slice());
    let at_origin: Vec<Complex<f64>> = efs
        .iter()
        .map(|ef| evaluate_eigenfunction(ef, &origin, data.equilibrium())[0].value)
        .collect();
    let zero_ok = at_origin.iter().all(|v| *v == Complex::new(0.0, 0.0));
    let independent = efs.len() == 2 && {
        let a = efs[0].coefficients.coefficients().rows(1, 2).into_owned();
        let b = efs[1].coefficients.coefficients().rows(1, 2).into_owned();
        (a[0] * b[1] - a[1] * b[0]).norm() > 1e-6
    };
    let shown: Vec<String> = linear
        .iter()
        .map(|l| format!("{:.4}{:+.4}i", l.re, l.im))
        .collect();
    outcome(
        lambda_ok && zero_ok && independent,
        format!(
            "degree-1 λ [{}], {} eigenfunctions (independent: {independent}, defective flag: {}), φ(0) = 0: {zero_ok}",
            shown.join(", "),
            efs.len(),
            efs.iter().any(|e| e.defective)
        ),
    )
}

/// Principal eigenfunction of the cubic flow against x/√(1−x²).
fn criterion_6() -> Outcome {
    let xs: Vec<f64> = (0..40)
        .map(|k| -0.9 + 1.8 * (k as f64 + 0.5) / 40.0)
        .collect();
    let dt = 0.1;
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| rk4_flow(&System::Cubic1D, &[x], dt, default_substeps(dt)).unwrap()[0])
        .collect();
    let data = SnapshotSet::new(
        DMatrix::from_column_slice(40, 1, &xs),
        DMatrix::from_column_slice(40, 1, &ys),
        Some(dt),
    )
    .unwrap();
    let basis = MonomialBasis::new(1, 5).unwrap();
    let k = fit_analytic_edmd(&data, &basis, SZEGO, policy()).unwrap();
    let efs = principal_eigenfunctions(&k);
    let ef = &efs[0];
    let c = ef.coefficients.coefficients();
    let target = [(1, 1.0), (3, 0.5), (5, 0.375)];
    let coeff_err = target
        .iter()
        .map(|&(i, v)| (c[i] - Complex::new(v, 0.0)).norm())
        .fold(0.0, f64::max);
    let grid: Vec<f64> = (0..81).map(|k| -0.8 + 1.6 * k as f64 / 80.0).collect();
    let values = evaluate_eigenfunction(
        ef,
        &DMatrix::from_column_slice(81, 1, &grid),
        &DVector::zeros(1),
    );
    let grid_err = grid
        .iter()
        .zip(&values)
        .filter(|(x, _)| x.abs() <= 0.6 + 1e-12)
        .map(|(x, v)| (v.value - Complex::new(x / (1.0 - x * x).sqrt(), 0.0)).norm())
        .fold(0.0, f64::max);
    outcome(
        coeff_err <= 5e-2 && grid_err <= 5e-2,
        format!(
            "max coefficient error {coeff_err:.2e}, max grid error on |x| ≤ 0.6 {grid_err:.2e}"
        ),
    )
}

/// Algebraic identities.
fn criterion_7() -> Outcome {
    // (a) square case
    let xs = [-0.7, -0.3, 0.1, 0.4, 0.8];
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| 0.3 * x + 0.4 * x * x - 0.2 * x * x * x)
        .collect();
    let data = SnapshotSet::new(
        DMatrix::from_column_slice(5, 1, &xs),
        DMatrix::from_column_slice(5, 1, &ys),
        None,
    )
    .unwrap();
    let basis = MonomialBasis::new(1, 4).unwrap();
    let analytic = fit_analytic_edmd_nonortho(&data, &basis, SZEGO, policy()).unwrap();
    let edmd = fit_edmd(&data, &basis).unwrap();
    let x = basis.evaluate(data.xs()).unwrap();
    let y = basis.evaluate(data.ys()).unwrap();
    let direct = x.lu().solve(&y).unwrap();
    let err_a = (analytic.values() - &direct)
        .amax()
        .max((edmd.values() - &direct).amax());

    // (b) kernel-section basis
    let pts = DMatrix::from_column_slice(4, 2, &[0.1, -0.4, 0.5, -0.2, 0.3, 0.2, -0.5, -0.1]);
    let imgs = pts.map(|v| 0.8 * v);
    let sections = SnapshotSet::new(pts.clone(), imgs.clone(), None).unwrap();
    let spec = KernelSpec::centered(KernelFamily::Exponential, 2).unwrap();
    let kbasis = KernelSectionBasis::new(KernelFamily::Exponential, pts.clone());
    let via_basis = analytic_edmd::edmd::fit_analytic_edmd_nonortho_matrix(
        &sections,
        &kbasis,
        KernelFamily::Exponential,
        InversionPolicy::Exact,
    )
    .unwrap();
    let g = gram_matrix(&spec, &pts).unwrap();
    let a = cross_gram_matrix(&spec, &pts, &imgs).unwrap();
    let kernel_edmd = g.values().clone().lu().solve(&a.values).unwrap();
    let err_b = (via_basis - kernel_edmd).amax();

    // (c) linear diagonal map in two dimensions
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pts = DMatrix::from_fn(10, 2, |_, _| rng.random_range(-0.8..0.8));
    let rates = [0.6, -0.3];
    let imgs = DMatrix::from_fn(10, 2, |i, j| rates[j] * pts[(i, j)]);
    let data = SnapshotSet::new(pts, imgs, None).unwrap();
    let basis = MonomialBasis::new(2, 3).unwrap();
    let k = fit_analytic_edmd_nonortho(&data, &basis, SZEGO, policy()).unwrap();
    let expected = DMatrix::from_diagonal(&DVector::from_iterator(
        basis.len(),
        basis.indices().iter().map(|alpha| {
            rates[0].powi(alpha.exponents()[0] as i32) * rates[1].powi(alpha.exponents()[1] as i32)
        }),
    ));
    let err_c = (k.values() - expected).amax();

    outcome(
        err_a <= 1e-8 && err_b <= 1e-10 && err_c <= 1e-8,
        format!("(a) {err_a:.1e}  (b) {err_b:.1e}  (c) {err_c:.1e}"),
    )
}

/// Fitted K on an exact polynomial map against the truncated composition matrix.
fn criterion_8() -> Outcome {
    let p = PolynomialMap::new(vec![
        Rational64::new(0, 1),
        Rational64::new(1, 2),
        Rational64::new(1, 10),
    ]);
    let basis = MonomialBasis::new(1, 4).unwrap();
    let oracle = exact_koopman_matrix_oracle(&p, &basis).unwrap();
    let mut worst_match: f64 = 0.0;
    let mut worst_tri: f64 = 0.0;
    for seed in [3u64, 17, 29] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = DMatrix::from_fn(40, 1, |_, _| rng.random_range(-0.9..0.9));
        let data = p.snapshots(xs).unwrap();
        let k = fit_analytic_edmd(&data, &basis, SZEGO, policy()).unwrap();
        worst_match = worst_match.max((k.values() - oracle.koopman.values()).amax());
        worst_tri = worst_tri.max(triangularity_residual(&k).max_abs);
    }
    outcome(
        oracle.exact && worst_match <= 1e-4 && worst_tri <= 1e-4,
        format!("max |K − oracle| {worst_match:.1e}, max off-triangle residual {worst_tri:.1e}"),
    )
}

/// Cheap invariant checks; the exhaustive versions live in the property suite.
fn criterion_9(suite_start: Instant) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pts = DMatrix::from_fn(20, 2, |_, _| rng.random_range(-0.9..0.9));
    let g = gram_matrix(&KernelSpec::centered(SZEGO, 2).unwrap(), &pts).unwrap();
    let symmetric = g.values() == &g.values().transpose();
    let psd = g
        .eigenvalues()
        .iter()
        .all(|&l| l >= -1e-12 * g.eigenvalues().amax());

    let sys = System::Cubic1D;
    let reference = rk4_flow(&sys, &[0.5], 1.0, 4096).unwrap()[0];
    let e1 = (rk4_flow(&sys, &[0.5], 1.0, 8).unwrap()[0] - reference).abs();
    let e2 = (rk4_flow(&sys, &[0.5], 1.0, 16).unwrap()[0] - reference).abs();
    let ratio = e1 / e2;

    let counts_ok = (1..=3).all(|n| {
        (0..=6).all(|d| {
            let expected = analytic_edmd::basis::binomial(n + d, d);
            enumerate_multiindices(n, d).unwrap().len() == expected
        })
    });

    let data = rescaled_data(&System::VanDerPol, 50, 1.0, PROTOCOL_SEED);
    let basis = MonomialBasis::new(2, 3).unwrap();
    let k = fit_analytic_edmd(&data, &basis, SZEGO, policy()).unwrap();
    let eigs = block_eigenvalues(&k, data.dt());
    let round_trip = eigs
        .iter()
        .filter_map(|e| {
            e.lambda
                .map(|l| ((l * data.dt().unwrap()).exp() - e.mu).norm() / e.mu.norm())
        })
        .fold(0.0, f64::max);
    let efs = principal_eigenfunctions(&k);
    let conj_err = if efs.len() == 2 {
        let a = efs[0].coefficients.coefficients();
        let b = efs[1].coefficients.coefficients();
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y.conj()).norm())
            .fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };

    let elapsed = suite_start.elapsed();
    let pass = symmetric
        && psd
        && (14.0..=18.0).contains(&ratio)
        && counts_ok
        && round_trip <= 1e-12
        && conj_err <= 1e-10
        && within_budget(elapsed, Duration::from_secs(60));
    outcome(
        pass,
        format!(
            "Gram symmetric {symmetric} PSD {psd}; RK4 ratio {ratio:.2}; counts {counts_ok}; exp/log {round_trip:.1e}; conjugate pair {conj_err:.1e}; suite {elapsed:.2?}"
        ),
    )
}

type Criterion = Box<dyn Fn() -> Outcome>;

fn main() {
    let suite_start = Instant::now();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("1 Taylor coefficients of log(1+x)", Box::new(criterion_1)),
        ("2 cubic unstable lattice", Box::new(criterion_2)),
        ("3 cubic stable lattice (translated)", Box::new(criterion_3)),
        ("4 Van der Pol principal pair", Box::new(criterion_4)),
        ("5 rotating dynamics", Box::new(criterion_5)),
        ("6 cubic eigenfunction", Box::new(criterion_6)),
        ("7 algebraic identities", Box::new(criterion_7)),
        ("8 triangular structure vs oracle", Box::new(criterion_8)),
        (
            "9 invariant suite",
            Box::new(move || criterion_9(suite_start)),
        ),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "[{}] criterion {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
