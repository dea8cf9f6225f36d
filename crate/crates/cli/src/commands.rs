use std::fs;
use std::path::{Path, PathBuf};

use analytic_edmd::kernel::gram_matrix;
use analytic_edmd::spectral::{aliasing_warning, nearest_lattice_points};
use analytic_edmd::{
    block_eigenvalues, default_substeps, evaluate_eigenfunction, fit_analytic_edmd,
    fit_analytic_edmd_nonortho, fit_dmd, fit_edmd, fit_kernel_edmd, generate_snapshots,
    lattice_match, principal_eigenfunctions, taylor_project, taylor_project_nonortho,
    triangularity_residual, Complex, DMatrix, DVector, Error as CoreError, InversionPolicy,
    KernelFamily, KernelSpec, KoopmanMatrix, MonomialBasis, MultiIndex, SampleRole,
    SampledFunction, SamplingPlan, SnapshotSet, System,
};
use anyhow::{anyhow, bail, ensure, Context, Result};
use log::{info, warn};

use crate::config::{
    output_dir, resolve_seed, CompareArgs, EigArgs, EigfunArgs, FileConfig, FitArgs, FitOptions,
    GenerateArgs, GridAxis, ProjectArgs, Rescale,
};
use crate::io::{self, fmt_f64, BlockMeta, KoopmanMeta, SnapshotMeta};
use crate::svg::{self, Marker, Series, PALETTE};

type C64 = Complex<f64>;

const DEFAULT_M: usize = 20;
const DEFAULT_DT: f64 = 1.0;
const DEFAULT_DEGREE: usize = 4;
const DEFAULT_TOL: f64 = 0.1;
const MAX_GRID_POINTS: usize = 10_000_000;

pub const SNAPSHOT_FILE: &str = "snapshots.csv";
pub const KOOPMAN_FILE: &str = "koopman.csv";

fn label(alpha: &MultiIndex) -> String {
    let parts: Vec<String> = alpha.exponents().iter().map(|a| a.to_string()).collect();
    format!("({})", parts.join(";"))
}

fn fmt_c(z: C64) -> String {
    if z.im == 0.0 {
        format!("{:.6}", z.re)
    } else {
        format!("{:.6}{:+.6}i", z.re, z.im)
    }
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// `lo,hi` broadcast to every axis, or one pair per axis.
fn expand_box(b: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let pairs: Vec<(f64, f64)> = match b.len() {
        2 => vec![(b[0], b[1]); n],
        l if l == 2 * n => b.chunks(2).map(|c| (c[0], c[1])).collect(),
        l => bail!("box has {l} numbers; expected 2 or {} for n = {n}", 2 * n),
    };
    for &(lo, hi) in &pairs {
        ensure!(
            lo.is_finite() && hi.is_finite() && lo <= hi,
            "box side [{lo}, {hi}] must be finite with lo <= hi"
        );
    }
    Ok(pairs.into_iter().unzip())
}

fn check_len(name: &str, v: &[f64], n: usize) -> Result<()> {
    ensure!(
        v.len() == n,
        "{name} has {} entries, expected n = {n}",
        v.len()
    );
    ensure!(v.iter().all(|x| x.is_finite()), "{name} must be finite");
    Ok(())
}

fn parse_family(flag: &Option<String>, file: &FileConfig) -> Result<KernelFamily> {
    match flag.as_ref().or(file.kernel.as_ref()) {
        Some(s) => Ok(s.parse()?),
        None => Ok(KernelFamily::SzegoPolydisc),
    }
}

fn parse_policy(flag: &Option<String>, file: &FileConfig) -> Result<InversionPolicy> {
    match flag.as_ref().or(file.policy.as_ref()) {
        Some(s) => Ok(s.parse()?),
        None => Ok(InversionPolicy::default()),
    }
}

fn parse_degree(flag: Option<usize>, file: &FileConfig) -> Result<usize> {
    let d = flag.or(file.degree).unwrap_or(DEFAULT_DEGREE);
    ensure!(d >= 1, "degree must be at least 1");
    Ok(d)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn generate(args: GenerateArgs, file: &FileConfig) -> Result<()> {
    let name = args.system.or_else(|| file.system.clone()).ok_or_else(|| {
        anyhow!("generate needs --system (cubic1d, vanderpol, rotating2d or linear:a,b,...)")
    })?;
    let system: System = name.parse()?;
    let n = system.dimension();
    let m = args.m.or(file.m).unwrap_or(DEFAULT_M);
    ensure!(m >= 1, "--m must be at least 1");
    let dt = args.dt.or(file.dt).unwrap_or(DEFAULT_DT);
    ensure!(
        dt > 0.0 && dt.is_finite(),
        "--dt must be positive, got {dt}"
    );
    let b = match args.sample_box {
        Some(b) => b,
        None => file.sample_box()?.unwrap_or_else(|| vec![-1.0, 1.0]),
    };
    let (low, high) = expand_box(&b, n)?;
    let seed = resolve_seed(args.seed, file.seed)?;
    let substeps = args
        .substeps
        .or(file.substeps)
        .unwrap_or_else(|| default_substeps(dt));
    ensure!(substeps >= 1, "--substeps must be at least 1");
    let rescale = args
        .rescale
        .or_else(|| file.rescale())
        .map(|r| r.parse::<Rescale>().map(|r| r.to_string()))
        .transpose()?;
    let equilibrium = match args.equilibrium {
        Some(e) => Some(e),
        None => file.equilibrium()?,
    };
    if let Some(e) = &equilibrium {
        check_len("equilibrium", e, n)?;
    }

    let plan = SamplingPlan::new(m, low.clone(), high.clone(), dt, seed)?;
    let data = generate_snapshots(&system, &plan, substeps)?;

    let dir = output_dir(&args.out, file);
    let path = dir.join(SNAPSHOT_FILE);
    let sample_box: Vec<f64> = low.iter().zip(&high).flat_map(|(l, h)| [*l, *h]).collect();
    let meta = SnapshotMeta {
        n,
        dt: Some(dt),
        seed: Some(seed),
        system: Some(system.name()),
        sample_box: Some(sample_box.clone()),
        substeps: Some(substeps),
        rescale,
        equilibrium,
    };
    io::write_snapshots(&path, &data, &meta)?;
    let sides: Vec<String> = low
        .iter()
        .zip(&high)
        .map(|(l, h)| format!("[{l}, {h}]"))
        .collect();
    out!(
        "generated {m} pairs of {} (n = {n}, dt = {dt}, seed = {seed}, box = {}, {substeps} RK4 steps per interval)",
        system.name(),
        sides.join("x")
    );
    out!("wrote {}", path.display());
    Ok(())
}

/// Coefficient of `x^k` in a Taylor series at 0.
type TaylorSeries = fn(usize) -> f64;
type Scalar1D = fn(f64) -> f64;

/// Test functions of `x1` with known Taylor series at 0.
fn builtin_function(name: &str) -> Result<(Scalar1D, TaylorSeries)> {
    fn factorial(k: usize) -> f64 {
        (1..=k).map(|i| i as f64).product()
    }
    Ok(match name {
        "log1p" => (f64::ln_1p, |k| {
            if k == 0 {
                0.0
            } else {
                (if k % 2 == 1 { 1.0 } else { -1.0 }) / k as f64
            }
        }),
        "exp" => (f64::exp, |k| 1.0 / factorial(k)),
        "sin" => (f64::sin, |k| match k % 4 {
            1 => 1.0 / factorial(k),
            3 => -1.0 / factorial(k),
            _ => 0.0,
        }),
        "cos" => (f64::cos, |k| match k % 4 {
            0 => 1.0 / factorial(k),
            2 => -1.0 / factorial(k),
            _ => 0.0,
        }),
        // x (1 − x²)^{-1/2} = Σ C(2j, j) 4^{-j} x^{2j+1}
        "inv-sqrt" => (
            |x| x / (1.0 - x * x).sqrt(),
            |k| {
                if k % 2 == 0 {
                    return 0.0;
                }
                let j = (k - 1) / 2;
                (1..=j).fold(1.0, |acc, i| acc * (2 * i - 1) as f64 / (2 * i) as f64)
            },
        ),
        other => bail!("unknown function '{other}' (expected log1p, exp, sin, cos or inv-sqrt)"),
    })
}

pub fn project(args: ProjectArgs, file: &FileConfig) -> Result<()> {
    let family = parse_family(&args.kernel, file)?;
    let policy = parse_policy(&args.policy, file)?;
    let degree = parse_degree(args.degree, file)?;
    let function = args.function.or_else(|| file.function.clone());
    let input = args.input.or_else(|| file.input.clone());

    let (points, values, exact): (DMatrix<f64>, Vec<f64>, Option<TaylorSeries>) =
        match (function, input) {
            (Some(name), None) => {
                let (f, series) = builtin_function(&name)?;
                let m = args.m.or(file.m).unwrap_or(DEFAULT_M);
                ensure!(m >= 1, "--m must be at least 1");
                let b = match args.sample_box {
                    Some(b) => b,
                    None => file.sample_box()?.unwrap_or_else(|| vec![-0.9, 0.9]),
                };
                let (low, high) = expand_box(&b, 1)?;
                let seed = resolve_seed(args.seed, file.seed)?;
                let pts = SamplingPlan::new(m, low, high, 1.0, seed)?.draw();
                let vals: Vec<f64> = pts.iter().map(|&x| f(x)).collect();
                ensure!(
                    vals.iter().all(|v| v.is_finite()),
                    "'{name}' is not finite on the sampling box"
                );
                (pts, vals, Some(series))
            }
            (None, Some(path)) => {
                let (pts, vals) = io::read_samples(&path)?;
                (pts, vals, None)
            }
            (Some(_), Some(_)) => bail!("give either --function or --input, not both"),
            (None, None) => bail!("project needs --function NAME or --input samples.csv"),
        };
    let n = points.ncols();
    let center = match args.equilibrium {
        Some(e) => e,
        None => file.equilibrium()?.unwrap_or_else(|| vec![0.0; n]),
    };
    check_len("equilibrium", &center, n)?;
    let at_origin = center.iter().all(|&c| c == 0.0);

    let spec = KernelSpec::new(family, DVector::from_vec(center.clone()))?;
    let gram = gram_matrix(&spec, &points)?;
    let sampled = SampledFunction::new(points.clone(), DVector::from_vec(values))?;
    let basis = family.orthonormal_basis(n, degree)?;
    let coeffs = if args.orthonormal {
        taylor_project(&sampled, &basis, &gram, policy)?
    } else {
        taylor_project_nonortho(&sampled, &basis, &gram, policy)?
    };

    let mut rows = Vec::new();
    out!(
        "{:>5} {:>10} {:>24} {:>24} {:>12}",
        "index",
        "alpha",
        "taylor",
        "exact",
        "abs_error"
    );
    for (i, alpha) in basis.indices().iter().enumerate() {
        let c = coeffs.coefficients()[i];
        let taylor = c * basis.weights()[i];
        let reference = exact.filter(|_| at_origin).map(|s| s(alpha.total_degree()));
        let err = reference.map(|r| (taylor - r).abs());
        out!(
            "{i:>5} {:>10} {:>24.16e} {:>24} {:>12}",
            label(alpha),
            taylor,
            reference.map(|r| format!("{r:.16e}")).unwrap_or_default(),
            err.map(|e| format!("{e:.3e}")).unwrap_or_default()
        );
        rows.push(vec![
            i.to_string(),
            label(alpha),
            fmt_f64(c),
            fmt_f64(taylor),
            opt_f64(reference),
            opt_f64(err),
        ]);
    }
    let dir = output_dir(&args.out, file);
    let path = dir.join("taylor.csv");
    let comments = vec![
        format!("kernel = {family}, policy = {policy}, degree = {degree}, samples = {}", points.nrows()),
        format!("center = {center:?}; coefficient multiplies the orthonormal basis function, taylor multiplies (x - center)^alpha"),
    ];
    let header: Vec<String> = [
        "index",
        "alpha",
        "coefficient",
        "taylor",
        "exact",
        "abs_error",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    io::write_table(&path, &comments, &header, &rows)?;
    out!("wrote {}", path.display());
    Ok(())
}

/// Snapshot data after translation, rescaling and the domain check.
struct Prepared {
    data: SnapshotSet,
    family: KernelFamily,
    policy: InversionPolicy,
    degree: usize,
    rho: f64,
    dropped: usize,
    system: Option<String>,
}

fn snapshot_path(opts: &FitOptions, file: &FileConfig, dir: &Path) -> PathBuf {
    opts.input
        .clone()
        .or_else(|| file.input.clone())
        .unwrap_or_else(|| dir.join(SNAPSHOT_FILE))
}

/// Every sample outside the open box of half-width `radius` around `x*`.
fn domain_violations(data: &SnapshotSet, radius: f64) -> Vec<(usize, SampleRole, f64)> {
    let (zx, zy) = data.translated();
    let mut out = Vec::new();
    for (z, role) in [(&zx, SampleRole::Source), (&zy, SampleRole::Image)] {
        for k in 0..z.nrows() {
            let mag = z.row(k).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if !(mag < radius) {
                out.push((k, role, mag));
            }
        }
    }
    out.sort_by_key(|&(k, role, _)| (k, role == SampleRole::Image));
    out
}

fn prepare(opts: &FitOptions, file: &FileConfig, dir: &Path) -> Result<Prepared> {
    let path = snapshot_path(opts, file, dir);
    let snaps = io::read_snapshots(&path)?;
    let n = snaps.data.dimension();
    let family = parse_family(&opts.kernel, file)?;
    let policy = parse_policy(&opts.policy, file)?;
    let degree = parse_degree(opts.degree, file)?;

    let equilibrium = match &opts.equilibrium {
        Some(e) => e.clone(),
        None => file
            .equilibrium()?
            .or_else(|| snaps.meta.equilibrium.clone())
            .unwrap_or_else(|| vec![0.0; n]),
    };
    check_len("equilibrium", &equilibrium, n)?;
    let mut data = snaps.data.at_equilibrium(DVector::from_vec(equilibrium))?;

    let rescale: Rescale = match opts
        .rescale
        .clone()
        .or_else(|| file.rescale())
        .or(snaps.meta.rescale.clone())
    {
        Some(r) => r.parse()?,
        None => Rescale::Factor(1.0),
    };
    let rho = match rescale {
        Rescale::Factor(r) => r,
        Rescale::Auto { margin } => {
            data.auto_rescale_factor(margin * family.domain_radius().min(1.0))
        }
    };
    if rho != 1.0 {
        info!("rescaling data by rho = {rho} about the equilibrium");
        data = data.rescaled(rho)?;
    }

    let radius = family.domain_radius();
    let drop = opts.drop_out_of_domain || file.drop_out_of_domain.unwrap_or(false);
    let mut dropped = 0;
    if drop {
        let (kept, d) = data.retain_in_domain(radius)?;
        if d > 0 {
            warn!(
                "dropped {d} of {} pairs outside the kernel domain",
                data.len()
            );
        }
        data = kept;
        dropped = d;
    } else {
        let bad = domain_violations(&data, radius);
        if let Some(&(index, role, magnitude)) = bad.first() {
            let listed: Vec<String> = bad
                .iter()
                .take(20)
                .map(|(k, r, m)| format!("{k} ({r}, {m:.4})"))
                .collect();
            let more = if bad.len() > 20 {
                format!(", ... ({} more)", bad.len() - 20)
            } else {
                String::new()
            };
            let core = CoreError::DomainViolation {
                index,
                role,
                magnitude,
                radius,
            };
            return Err(anyhow::Error::new(core).context(format!(
                "{} sample(s) outside the kernel domain (sample index, role, max |coordinate - x*| after rescaling by {rho}): {}{more}; use --rescale or --drop-out-of-domain",
                bad.len(),
                listed.join(", ")
            )));
        }
    }

    Ok(Prepared {
        data,
        family,
        policy,
        degree,
        rho,
        dropped,
        system: snaps.meta.system.clone(),
    })
}

pub fn fit(args: FitArgs, file: &FileConfig) -> Result<()> {
    let dir = output_dir(&args.out, file);
    let p = prepare(&args.fit, file, &dir)?;
    let n = p.data.dimension();
    let basis = p.family.orthonormal_basis(n, p.degree)?;
    let method = args
        .method
        .or_else(|| file.method.clone())
        .unwrap_or_else(|| "analytic".into());
    let k = match method.to_ascii_lowercase().as_str() {
        "analytic" | "analytic-edmd" => fit_analytic_edmd(&p.data, &basis, p.family, p.policy)?,
        "nonortho" | "analytic-edmd-nonortho" => {
            fit_analytic_edmd_nonortho(&p.data, &basis, p.family, p.policy)?
        }
        "edmd" => fit_edmd(&p.data, &basis)?,
        other => bail!("unknown method '{other}' (expected analytic, nonortho or edmd)"),
    };
    let gram_condition = match k.method() {
        analytic_edmd::Method::Edmd => None,
        _ => {
            let (zx, _) = p.data.translated();
            let spec = KernelSpec::centered(p.family, n)?;
            Some(gram_matrix(&spec, &zx)?.condition_estimate())
        }
    };
    let tri = triangularity_residual(&k);
    let meta = KoopmanMeta {
        method: k.method().to_string(),
        kernel: p.family.to_string(),
        n,
        degree: p.degree,
        dt: p.data.dt(),
        equilibrium: p.data.equilibrium().iter().copied().collect(),
        rescale: p.rho,
        policy: p.policy.to_string(),
        samples: p.data.len(),
        dropped: p.dropped,
        system: p.system.clone(),
        gram_condition,
        triangularity_max_abs: tri.max_abs,
        triangularity_relative: tri.relative_frobenius,
        blocks: k
            .blocks()
            .iter()
            .map(|b| BlockMeta {
                degree: b.degree,
                start: b.start,
                size: b.size,
            })
            .collect(),
        exponents: basis
            .indices()
            .iter()
            .map(|a| a.exponents().to_vec())
            .collect(),
        weights: basis.weights().to_vec(),
    };
    let path = dir.join(KOOPMAN_FILE);
    io::write_koopman(&path, &k, &meta)?;

    out!(
        "fit {} on {} pairs: n = {n}, degree {}, N = {}, kernel {}, policy {}",
        meta.method,
        meta.samples,
        p.degree,
        basis.len(),
        meta.kernel,
        meta.policy
    );
    out!(
        "equilibrium = {:?}, rescale = {}, dropped = {}",
        meta.equilibrium,
        p.rho,
        p.dropped
    );
    out!(
        "triangularity residual: max |K_ij| above the diagonal blocks = {:.3e}, relative Frobenius = {:.3e}",
        tri.max_abs, tri.relative_frobenius
    );
    if let Some(c) = gram_condition {
        out!("Gram condition estimate: {c:.3e}");
    }
    out!(
        "wrote {} and {}",
        path.display(),
        io::sidecar_path(&path).display()
    );
    Ok(())
}

fn koopman_path(flag: &Option<PathBuf>, file: &FileConfig, dir: &Path) -> PathBuf {
    flag.clone()
        .or_else(|| file.koopman.clone())
        .unwrap_or_else(|| dir.join(KOOPMAN_FILE))
}

/// Lattice points `Σ αⱼ gⱼ` (continuous time) or `∏ gⱼ^{αⱼ}` with `|α| ≤ degree`.
fn lattice_points(generators: &[C64], degree: usize, continuous: bool) -> Vec<C64> {
    let mut out = Vec::new();
    for r in 0..=degree {
        for alpha in analytic_edmd::basis::multiindices_of_degree(generators.len(), r) {
            let z = if continuous {
                alpha
                    .exponents()
                    .iter()
                    .zip(generators)
                    .map(|(&a, g)| g * a as f64)
                    .sum()
            } else {
                alpha
                    .exponents()
                    .iter()
                    .zip(generators)
                    .map(|(&a, g)| g.powu(a))
                    .product()
            };
            out.push(z);
        }
    }
    out
}

fn points(zs: &[C64]) -> Vec<(f64, f64)> {
    zs.iter().map(|z| (z.re, z.im)).collect()
}

pub fn eig(args: EigArgs, file: &FileConfig) -> Result<()> {
    let dir = output_dir(&args.out, file);
    let path = koopman_path(&args.koopman, file, &dir);
    let (k, meta) = io::read_koopman(&path)?;
    let dt = args.dt.or(meta.dt).or(file.dt);
    if let Some(dt) = dt {
        ensure!(dt > 0.0 && dt.is_finite(), "dt must be positive, got {dt}");
    }
    let tol = args.tol.or(file.tol).unwrap_or(DEFAULT_TOL);
    ensure!(tol >= 0.0, "--tol must be non-negative");

    let eigs = block_eigenvalues(&k, dt);
    if let Some(dt) = dt {
        if aliasing_warning(&eigs, dt) {
            warn!("a degree-1 eigenvalue has |Im lambda| dt close to pi; generator eigenvalues may be aliased");
        }
    }
    let report = lattice_match(&eigs, tol);
    let ct = report.continuous_time;

    let mut rows = Vec::new();
    out!(
        "{:>6} {:>32} {:>32} {:>10} {:>10}",
        "degree",
        "mu",
        "lambda",
        "label",
        "error"
    );
    for e in &report.eigenvalues {
        let (lab, err) = if e.degree == 0 {
            let zero = MultiIndex::zero(k.basis().dimension());
            let err = match (ct, e.lambda) {
                (true, Some(l)) => l.norm(),
                _ => (e.mu - 1.0).norm(),
            };
            (Some(label(&zero)), Some(err))
        } else {
            (e.lattice_label.as_ref().map(label), e.match_error)
        };
        out!(
            "{:>6} {:>32} {:>32} {:>10} {:>10}",
            e.degree,
            fmt_c(e.mu),
            e.lambda.map(fmt_c).unwrap_or_default(),
            lab.clone().unwrap_or_else(|| "-".into()),
            err.map(|x| format!("{x:.2e}")).unwrap_or_default()
        );
        rows.push(vec![
            e.degree.to_string(),
            fmt_f64(e.mu.re),
            fmt_f64(e.mu.im),
            opt_f64(e.lambda.map(|l| l.re)),
            opt_f64(e.lambda.map(|l| l.im)),
            lab.unwrap_or_default(),
            opt_f64(err),
        ]);
    }
    let unmatched = report.unmatched.len();
    out!(
        "lattice match on {} (tol {tol}): {unmatched} unmatched, mean error {}, max error {}",
        if ct { "lambda" } else { "mu" },
        report
            .mean_error()
            .map(|x| format!("{x:.3e}"))
            .unwrap_or_else(|| "-".into()),
        report
            .max_error()
            .map(|x| format!("{x:.3e}"))
            .unwrap_or_else(|| "-".into())
    );

    let mut comments = vec![
        format!(
            "method = {}, kernel = {}, n = {}, degree = {}",
            meta.method, meta.kernel, meta.n, meta.degree
        ),
        format!(
            "dt = {}, rescale = {} (eigenvalues are invariant under the rescaling)",
            dt.map(|d| d.to_string())
                .unwrap_or_else(|| "unknown".into()),
            meta.rescale
        ),
        format!(
            "lattice matched on {} with tol = {tol}; {unmatched} eigenvalue(s) unmatched",
            if ct { "lambda" } else { "mu" }
        ),
    ];
    for (r, m) in report.max_error_by_degree.iter().enumerate() {
        if let Some(m) = m {
            comments.push(format!("max match error at degree {r}: {m:.3e}"));
        }
    }
    let header: Vec<String> = [
        "degree",
        "re_mu",
        "im_mu",
        "re_lambda",
        "im_lambda",
        "lattice_label",
        "match_error",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let csv_path = dir.join("eigenvalues.csv");
    io::write_table(&csv_path, &comments, &header, &rows)?;

    let values: Vec<C64> = report
        .eigenvalues
        .iter()
        .map(|e| if ct { e.lambda.unwrap_or(e.mu) } else { e.mu })
        .collect();
    let gens: Vec<C64> = report
        .eigenvalues
        .iter()
        .filter(|e| e.degree == 1)
        .map(|e| if ct { e.lambda.unwrap_or(e.mu) } else { e.mu })
        .collect();
    let series = vec![
        Series {
            label: "lattice".into(),
            color: "#888888",
            marker: Marker::Cross,
            points: points(&lattice_points(&gens, k.max_degree(), ct)),
        },
        Series {
            label: meta.method.clone(),
            color: PALETTE[0],
            marker: Marker::Dot,
            points: points(&values),
        },
    ];
    let (title, xl, yl) = if ct {
        ("Koopman generator eigenvalues", "Re lambda", "Im lambda")
    } else {
        ("Koopman eigenvalues", "Re mu", "Im mu")
    };
    let svg_path = dir.join("eigenvalues.svg");
    write_text(&svg_path, &svg::scatter(title, xl, yl, &series))?;
    out!("wrote {} and {}", csv_path.display(), svg_path.display());
    Ok(())
}

fn grid_points(axes: &[GridAxis]) -> Result<DMatrix<f64>> {
    let total = axes
        .iter()
        .try_fold(1usize, |acc, a| acc.checked_mul(a.count))
        .filter(|&t| t <= MAX_GRID_POINTS)
        .ok_or_else(|| anyhow!("grid has more than {MAX_GRID_POINTS} points"))?;
    let values: Vec<Vec<f64>> = axes.iter().map(GridAxis::values).collect();
    let n = axes.len();
    let mut out = DMatrix::zeros(total, n);
    // first axis varies slowest
    for row in 0..total {
        let mut rem = row;
        for j in (0..n).rev() {
            let c = axes[j].count;
            out[(row, j)] = values[j][rem % c];
            rem /= c;
        }
    }
    Ok(out)
}

pub fn eigfun(args: EigfunArgs, file: &FileConfig) -> Result<()> {
    let dir = output_dir(&args.out, file);
    let path = koopman_path(&args.koopman, file, &dir);
    let (k, meta) = io::read_koopman(&path)?;
    let n = meta.n;

    let specs = if args.grid.is_empty() {
        file.grid.clone().unwrap_or_default()
    } else {
        args.grid
    };
    ensure!(
        !specs.is_empty(),
        "eigfun needs --grid lo,hi,count (once per axis, or once for all axes)"
    );
    let mut axes = specs
        .iter()
        .map(|s| s.parse::<GridAxis>())
        .collect::<Result<Vec<_>>>()?;
    if axes.len() == 1 && n > 1 {
        axes = vec![axes[0]; n];
    }
    ensure!(axes.len() == n, "got {} grid axes for n = {n}", axes.len());
    let grid = grid_points(&axes)?;

    let efs: Vec<_> = principal_eigenfunctions(&k)
        .into_iter()
        .map(|ef| {
            if meta.rescale != 1.0 {
                ef.rescaled_coordinates(meta.rescale)
            } else {
                ef
            }
        })
        .collect();
    ensure!(!efs.is_empty(), "the matrix has no degree-1 block");
    let indices = if !args.index.is_empty() {
        args.index
    } else {
        file.index
            .clone()
            .unwrap_or_else(|| (0..efs.len()).collect())
    };
    for &i in &indices {
        ensure!(
            i < efs.len(),
            "eigenfunction index {i} out of range (0..{})",
            efs.len()
        );
    }

    let center = DVector::from_vec(meta.equilibrium.clone());
    let reach = (0..grid.nrows())
        .map(|r| (0..n).fold(0.0f64, |a, j| a.max((grid[(r, j)] - center[j]).abs())))
        .fold(0.0f64, f64::max);
    let family: KernelFamily = meta.kernel.parse()?;
    let domain = family.domain_radius() / meta.rescale;

    let mut comments = vec![
        format!(
            "principal eigenfunctions of {} (kernel {}, degree {})",
            meta.method, meta.kernel, meta.degree
        ),
        format!(
            "equilibrium = {:?}; coefficients converted from rescale = {} to original coordinates",
            meta.equilibrium, meta.rescale
        ),
    ];
    let mut warnings = Vec::new();
    if reach >= domain {
        warnings.push(format!(
            "warning: grid reaches |x - x*| = {reach:.4}, outside the kernel domain of the fit (radius {domain:.4})"
        ));
    }
    for &i in &indices {
        let ef = &efs[i];
        let lambda = meta.dt.and_then(|dt| ef.lambda(dt));
        let resonant: Vec<String> = ef
            .conditioning
            .iter()
            .filter(|d| d.resonant)
            .map(|d| d.degree.to_string())
            .collect();
        let radius = ef.convergence_radius_estimate();
        comments.push(format!(
            "eigenfunction {i}: mu = {}, lambda = {}, radius estimate = {}{}{}",
            fmt_c(ef.mu),
            lambda.map(fmt_c).unwrap_or_else(|| "-".into()),
            radius
                .map(|r| format!("{r:.4}"))
                .unwrap_or_else(|| "-".into()),
            if ef.defective {
                ", near-defective linear block"
            } else {
                ""
            },
            if resonant.is_empty() {
                String::new()
            } else {
                format!(", resonant at degree(s) {}", resonant.join(" "))
            }
        ));
        if let Some(r) = radius.filter(|&r| reach >= r) {
            warnings.push(format!(
                "warning: eigenfunction {i}: grid reaches |x - x*| = {reach:.4}, beyond the estimated radius of convergence {r:.4}; values there are unreliable"
            ));
        }
    }
    for w in &warnings {
        warn!("{w}");
    }
    comments.extend(warnings);

    let mut header = vec!["index".to_string()];
    header.extend((1..=n).map(|j| format!("x{j}")));
    header.extend(
        ["re_phi", "im_phi", "abs_phi", "arg_phi"]
            .iter()
            .map(|s| s.to_string()),
    );
    let mut rows = Vec::with_capacity(indices.len() * grid.nrows());
    for &i in &indices {
        let vals = evaluate_eigenfunction(&efs[i], &grid, &center);
        for (r, v) in vals.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend((0..n).map(|j| fmt_f64(grid[(r, j)])));
            row.extend([
                fmt_f64(v.value.re),
                fmt_f64(v.value.im),
                fmt_f64(v.abs),
                fmt_f64(v.arg),
            ]);
            rows.push(row);
        }
    }
    let out = dir.join("eigenfunctions.csv");
    io::write_table(&out, &comments, &header, &rows)?;
    out!(
        "evaluated {} eigenfunction(s) on {} grid points",
        indices.len(),
        grid.nrows()
    );
    out!("wrote {}", out.display());

    if args.coefficients {
        let basis = k.basis();
        let mut crows = Vec::new();
        for &i in &indices {
            let c = efs[i].coefficients.coefficients();
            for (j, alpha) in basis.indices().iter().enumerate() {
                let t = c[j] * basis.weights()[j];
                crows.push(vec![
                    i.to_string(),
                    label(alpha),
                    fmt_f64(c[j].re),
                    fmt_f64(c[j].im),
                    fmt_f64(t.re),
                    fmt_f64(t.im),
                ]);
            }
        }
        let header: Vec<String> = [
            "index",
            "alpha",
            "re_coefficient",
            "im_coefficient",
            "re_taylor",
            "im_taylor",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let cpath = dir.join("eigenfunction_coefficients.csv");
        io::write_table(
            &cpath,
            &[format!(
                "Taylor coefficients about x* = {:?} in original coordinates",
                meta.equilibrium
            )],
            &header,
            &crows,
        )?;
        out!("wrote {}", cpath.display());
    }
    Ok(())
}

/// Spectrum of one method with errors against the reference lattice.
struct MethodSpectrum {
    name: String,
    mus: Vec<C64>,
    lambdas: Vec<Option<C64>>,
    matches: Vec<Option<(MultiIndex, f64)>>,
}

impl MethodSpectrum {
    fn errors(&self) -> Vec<f64> {
        self.matches.iter().flatten().map(|(_, e)| *e).collect()
    }
}

fn sorted_spectrum(m: &DMatrix<f64>) -> Vec<C64> {
    let mut v: Vec<C64> = m.complex_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
    v
}

/// `log μ / Δt`, or `None` for eigenvalues that vanish to working precision.
fn to_lambdas(mus: &[C64], dt: f64) -> Vec<Option<C64>> {
    let scale = mus.iter().map(|z| z.norm()).fold(0.0, f64::max);
    mus.iter()
        .map(|&mu| (mu.norm() > 1e-12 * scale.max(1e-300)).then(|| mu.ln() / dt))
        .collect()
}

pub fn compare(args: CompareArgs, file: &FileConfig) -> Result<()> {
    let dir = output_dir(&args.out, file);
    let p = prepare(&args.fit, file, &dir)?;
    let n = p.data.dimension();
    let dt = p
        .data
        .dt()
        .ok_or_else(|| anyhow!("compare needs a sampling time; the snapshot file has no dt"))?;
    let tol = args.tol.or(file.tol).unwrap_or(DEFAULT_TOL);
    let basis: MonomialBasis = p.family.orthonormal_basis(n, p.degree)?;

    let analytic: KoopmanMatrix = fit_analytic_edmd(&p.data, &basis, p.family, p.policy)?;
    let analytic_mus: Vec<C64> = block_eigenvalues(&analytic, None)
        .into_iter()
        .map(|e| e.mu)
        .collect();
    let edmd = fit_edmd(&p.data, &basis)?;
    let dmd = fit_dmd(&p.data)?;
    let kedmd = fit_kernel_edmd(&p.data, p.family, p.policy)?;

    // eigenvalues are invariant under the rescaling, so the Jacobian at x* is the reference
    let eq: Vec<f64> = p.data.equilibrium().iter().copied().collect();
    let reference = match p.system.as_deref().map(str::parse::<System>) {
        Some(Ok(sys)) if sys.dimension() == n => {
            let mut f = vec![0.0; n];
            sys.eval(&eq, &mut f);
            if f.iter().any(|v| v.abs() > 1e-8) {
                warn!(
                    "x* = {eq:?} is not an equilibrium of {} (|f(x*)| = {:.2e})",
                    sys.name(),
                    f.iter().fold(0.0f64, |a, v| a.max(v.abs()))
                );
            }
            ("Jacobian eigenvalues at x*", sys.jacobian_eigenvalues(&eq))
        }
        _ => {
            let gens: Vec<C64> = block_eigenvalues(&analytic, Some(dt))
                .into_iter()
                .filter(|e| e.degree == 1)
                .filter_map(|e| e.lambda)
                .collect();
            ("analytic-EDMD degree-1 eigenvalues", gens)
        }
    };
    let (ref_name, gens) = reference;

    let mut spectra = Vec::new();
    for (name, mus) in [
        ("analytic-EDMD", analytic_mus),
        ("EDMD", sorted_spectrum(edmd.values())),
        ("DMD", sorted_spectrum(&dmd)),
        ("kernel-EDMD", sorted_spectrum(&kedmd)),
    ] {
        let lambdas = to_lambdas(&mus, dt);
        let finite: Vec<C64> = lambdas.iter().flatten().copied().collect();
        let mut it = nearest_lattice_points(&finite, &gens, p.degree).into_iter();
        let matches = lambdas
            .iter()
            .map(|l| l.and_then(|_| it.next().flatten()))
            .collect();
        spectra.push(MethodSpectrum {
            name: name.to_string(),
            mus,
            lambdas,
            matches,
        });
    }

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    out!(
        "reference lattice: {ref_name} {{{}}}, degree <= {}",
        gens.iter()
            .map(|g| fmt_c(*g))
            .collect::<Vec<_>>()
            .join(", "),
        p.degree
    );
    out!(
        "{:<14} {:>12} {:>10} {:>12} {:>12} {:>12}",
        "method",
        "eigenvalues",
        "vanishing",
        "mean_error",
        "max_error",
        "outside_tol"
    );
    for s in &spectra {
        for (i, ((mu, lambda), m)) in s.mus.iter().zip(&s.lambdas).zip(&s.matches).enumerate() {
            rows.push(vec![
                s.name.clone(),
                i.to_string(),
                fmt_f64(mu.re),
                fmt_f64(mu.im),
                opt_f64(lambda.map(|l| l.re)),
                opt_f64(lambda.map(|l| l.im)),
                m.as_ref().map(|(a, _)| label(a)).unwrap_or_default(),
                opt_f64(m.as_ref().map(|(_, e)| *e)),
            ]);
        }
        let errs = s.errors();
        let mean = (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64);
        let max = errs
            .iter()
            .copied()
            .fold(None, |a: Option<f64>, e| Some(a.map_or(e, |a| a.max(e))));
        let outside = errs.iter().filter(|&&e| e > tol).count();
        let vanishing = s.lambdas.iter().filter(|l| l.is_none()).count();
        out!(
            "{:<14} {:>12} {:>10} {:>12} {:>12} {:>12}",
            s.name,
            s.mus.len(),
            vanishing,
            mean.map(|x| format!("{x:.3e}"))
                .unwrap_or_else(|| "-".into()),
            max.map(|x| format!("{x:.3e}"))
                .unwrap_or_else(|| "-".into()),
            outside
        );
        summary.push(vec![
            s.name.clone(),
            s.mus.len().to_string(),
            vanishing.to_string(),
            opt_f64(mean),
            opt_f64(max),
            outside.to_string(),
        ]);
    }

    let comments = vec![
        format!("kernel = {}, policy = {}, degree = {}, samples = {}, dt = {dt}, rescale = {}", p.family, p.policy, p.degree, p.data.len(), p.rho),
        format!("reference lattice from {ref_name}; analytic-EDMD reports diagonal-block eigenvalues, the others their full spectrum"),
    ];
    let header: Vec<String> = [
        "method",
        "index",
        "re_mu",
        "im_mu",
        "re_lambda",
        "im_lambda",
        "lattice_label",
        "match_error",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let csv_path = dir.join("compare.csv");
    io::write_table(&csv_path, &comments, &header, &rows)?;
    let sum_header: Vec<String> = [
        "method",
        "eigenvalues",
        "vanishing",
        "mean_error",
        "max_error",
        "outside_tol",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let sum_path = dir.join("compare_summary.csv");
    io::write_table(&sum_path, &[format!("tol = {tol}")], &sum_header, &summary)?;

    // plot window: the lattice plus a margin, so vanishing-mode outliers do not squash it
    let lattice = lattice_points(&gens, p.degree, true);
    let (mut x0, mut x1, mut y0, mut y1) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for z in &lattice {
        x0 = x0.min(z.re);
        x1 = x1.max(z.re);
        y0 = y0.min(z.im);
        y1 = y1.max(z.im);
    }
    let margin = (0.5 * (x1 - x0).max(y1 - y0)).max(1.0);
    let inside = |z: &C64| {
        z.re >= x0 - margin && z.re <= x1 + margin && z.im >= y0 - margin && z.im <= y1 + margin
    };
    let mut series = vec![Series {
        label: "lattice".into(),
        color: "#888888",
        marker: Marker::Cross,
        points: points(&lattice),
    }];
    for (i, s) in spectra.iter().enumerate() {
        let all: Vec<C64> = s.lambdas.iter().flatten().copied().collect();
        let shown: Vec<C64> = all.iter().filter(|z| inside(z)).copied().collect();
        let hidden = all.len() - shown.len();
        series.push(Series {
            label: if hidden > 0 {
                format!("{} ({hidden} off-plot)", s.name)
            } else {
                s.name.clone()
            },
            color: PALETTE[i % PALETTE.len()],
            marker: Marker::Dot,
            points: points(&shown),
        });
    }
    let svg_path = dir.join("compare.svg");
    write_text(
        &svg_path,
        &svg::scatter(
            "Generator eigenvalues by method",
            "Re lambda",
            "Im lambda",
            &series,
        ),
    )?;
    out!(
        "wrote {}, {} and {}",
        csv_path.display(),
        sum_path.display(),
        svg_path.display()
    );
    Ok(())
}
