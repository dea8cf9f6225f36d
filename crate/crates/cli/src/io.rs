//! File formats: snapshot CSV, Koopman matrix CSV with a TOML sidecar, and
//! plain result tables.
//!
//! Floats are written as `{:.16e}` (17 significant digits), which parses back
//! to the identical `f64`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use analytic_edmd::{DMatrix, KernelFamily, KoopmanMatrix, Method, SnapshotSet};
use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_list(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_list(key: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .with_context(|| format!("metadata '{key}': bad number '{p}'"))
        })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Metadata carried in `# key = value` lines above the snapshot header.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SnapshotMeta {
    pub n: usize,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
    pub system: Option<String>,
    pub sample_box: Option<Vec<f64>>,
    pub substeps: Option<usize>,
    pub rescale: Option<String>,
    pub equilibrium: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SnapshotFile {
    /// Pairs in original coordinates, equilibrium at the origin.
    pub data: SnapshotSet,
    pub meta: SnapshotMeta,
}

pub fn write_snapshots(path: &Path, data: &SnapshotSet, meta: &SnapshotMeta) -> Result<()> {
    let n = data.dimension();
    let mut w = create(path)?;
    writeln!(w, "# analytic-edmd snapshots")?;
    writeln!(w, "# n = {n}")?;
    if let Some(dt) = meta.dt {
        writeln!(w, "# dt = {dt}")?;
    }
    if let Some(seed) = meta.seed {
        writeln!(w, "# seed = {seed}")?;
    }
    if let Some(system) = &meta.system {
        writeln!(w, "# system = {system}")?;
    }
    if let Some(b) = &meta.sample_box {
        writeln!(w, "# box = {}", fmt_list(b))?;
    }
    if let Some(s) = meta.substeps {
        writeln!(w, "# substeps = {s}")?;
    }
    if let Some(r) = &meta.rescale {
        writeln!(w, "# rescale = {r}")?;
    }
    if let Some(e) = &meta.equilibrium {
        writeln!(w, "# equilibrium = {}", fmt_list(e))?;
    }
    let mut cw = csv::Writer::from_writer(w);
    let header: Vec<String> = (1..=n)
        .map(|i| format!("x{i}"))
        .chain((1..=n).map(|i| format!("y{i}")))
        .collect();
    cw.write_record(&header)?;
    for k in 0..data.len() {
        let row: Vec<String> = data
            .xs()
            .row(k)
            .iter()
            .chain(data.ys().row(k).iter())
            .map(|&v| fmt_f64(v))
            .collect();
        cw.write_record(&row)?;
    }
    cw.flush()?;
    Ok(())
}

/// Splits leading `#` lines from the CSV body.
fn split_comments(text: &str) -> (Vec<&str>, String) {
    let mut comments = Vec::new();
    let mut body = String::new();
    let mut in_header = true;
    for line in text.lines() {
        let t = line.trim_start();
        if in_header && (t.starts_with('#') || t.is_empty()) {
            if let Some(c) = t.strip_prefix('#') {
                comments.push(c.trim());
            }
            continue;
        }
        in_header = false;
        body.push_str(line);
        body.push('\n');
    }
    (comments, body)
}

fn parse_record(record: &csv::StringRecord, line: usize) -> Result<Vec<f64>> {
    record
        .iter()
        .enumerate()
        .map(|(c, field)| {
            let v: f64 = field.trim().parse().with_context(|| {
                format!("line {line}, column {}: '{field}' is not a number", c + 1)
            })?;
            ensure!(
                v.is_finite(),
                "line {line}, column {}: non-finite value",
                c + 1
            );
            Ok(v)
        })
        .collect()
}

pub fn read_snapshots(path: &Path) -> Result<SnapshotFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_snapshots(&text).with_context(|| format!("parsing snapshot file {}", path.display()))
}

pub fn parse_snapshots(text: &str) -> Result<SnapshotFile> {
    let (comments, body) = split_comments(text);
    let mut meta = SnapshotMeta::default();
    let mut declared_n = None;
    for c in comments {
        let Some((key, value)) = c.split_once('=') else {
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "n" => declared_n = Some(value.parse::<usize>().context("metadata 'n'")?),
            "dt" => meta.dt = Some(value.parse().context("metadata 'dt'")?),
            "seed" => meta.seed = Some(value.parse().context("metadata 'seed'")?),
            "system" => meta.system = Some(value.to_string()),
            "box" => meta.sample_box = Some(parse_list(key, value)?),
            "substeps" => meta.substeps = Some(value.parse().context("metadata 'substeps'")?),
            "rescale" => meta.rescale = Some(value.to_string()),
            "equilibrium" => meta.equilibrium = Some(parse_list(key, value)?),
            _ => log::debug!("ignoring metadata key '{key}'"),
        }
    }

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(body.as_bytes());
    let header = rdr.headers().context("missing header row")?.clone();
    let cols = header.len();
    ensure!(
        cols >= 2 && cols % 2 == 0,
        "header must be x1..xn,y1..yn, found {cols} columns"
    );
    let n = cols / 2;
    for (c, name) in header.iter().enumerate() {
        let want = if c < n {
            format!("x{}", c + 1)
        } else {
            format!("y{}", c - n + 1)
        };
        ensure!(
            name.trim() == want,
            "header column {} is '{name}', expected '{want}'",
            c + 1
        );
    }
    if let Some(d) = declared_n {
        ensure!(
            d == n,
            "metadata says n = {d} but the header has {n} state columns"
        );
    }
    if let Some(e) = &meta.equilibrium {
        ensure!(
            e.len() == n,
            "metadata equilibrium has {} entries, expected {n}",
            e.len()
        );
    }
    meta.n = n;

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("data row {}", k + 1))?;
        let row = parse_record(&rec, k + 2)?;
        xs.extend_from_slice(&row[..n]);
        ys.extend_from_slice(&row[n..]);
    }
    let m = xs.len() / n;
    ensure!(m > 0, "no snapshot pairs");
    let data = SnapshotSet::new(
        DMatrix::from_row_slice(m, n, &xs),
        DMatrix::from_row_slice(m, n, &ys),
        meta.dt,
    )?;
    Ok(SnapshotFile { data, meta })
}

/// Samples `x1..xn,f` for the projection command.
pub fn read_samples(path: &Path) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (_, body) = split_comments(&text);
    let mut rdr = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let header = rdr.headers().context("missing header row")?.clone();
    let n = header.len().saturating_sub(1);
    ensure!(n >= 1, "sample header must be x1..xn,f");
    for (c, name) in header.iter().enumerate() {
        let want = if c < n {
            format!("x{}", c + 1)
        } else {
            "f".to_string()
        };
        ensure!(
            name.trim() == want,
            "sample header column {} is '{name}', expected '{want}'",
            c + 1
        );
    }
    let mut xs = Vec::new();
    let mut fs_ = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = parse_record(&rec?, k + 2)?;
        xs.extend_from_slice(&row[..n]);
        fs_.push(row[n]);
    }
    ensure!(!fs_.is_empty(), "no samples in {}", path.display());
    Ok((DMatrix::from_row_slice(fs_.len(), n, &xs), fs_))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMeta {
    pub degree: usize,
    pub start: usize,
    pub size: usize,
}

/// Sidecar written next to a Koopman matrix CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KoopmanMeta {
    pub method: String,
    pub kernel: String,
    pub n: usize,
    pub degree: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub equilibrium: Vec<f64>,
    /// Factor ρ of `z = x* + ρ(x − x*)` applied before the fit.
    pub rescale: f64,
    pub policy: String,
    pub samples: usize,
    pub dropped: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gram_condition: Option<f64>,
    pub triangularity_max_abs: f64,
    pub triangularity_relative: f64,
    pub blocks: Vec<BlockMeta>,
    pub exponents: Vec<Vec<u32>>,
    pub weights: Vec<f64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.toml")
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut cw = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(create(path)?);
    for i in 0..m.nrows() {
        cw.write_record(m.row(i).iter().map(|&v| fmt_f64(v)))?;
    }
    cw.flush()?;
    Ok(())
}

pub fn write_koopman(path: &Path, k: &KoopmanMatrix, meta: &KoopmanMeta) -> Result<()> {
    write_matrix(path, k.values())?;
    let side = sidecar_path(path);
    let text = toml::to_string(meta).context("serializing matrix metadata")?;
    fs::write(&side, text).with_context(|| format!("writing {}", side.display()))?;
    Ok(())
}

pub fn read_koopman(path: &Path) -> Result<(KoopmanMatrix, KoopmanMeta)> {
    let inner = || -> Result<(KoopmanMatrix, KoopmanMeta)> {
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side)
            .with_context(|| format!("reading block metadata {}", side.display()))?;
        let meta: KoopmanMeta = toml::from_str(&text)
            .with_context(|| format!("parsing block metadata {}", side.display()))?;

        let body =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(body.as_bytes());
        let mut values = Vec::new();
        let mut rows = 0;
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec.with_context(|| format!("row {}", k + 1))?;
            let row = parse_record(&rec, k + 1)?;
            values.extend(row);
            rows += 1;
        }
        ensure!(rows > 0, "empty matrix");
        ensure!(
            values.len() == rows * rows,
            "matrix is not square ({rows} rows, {} entries)",
            values.len()
        );
        let family: KernelFamily = meta.kernel.parse()?;
        let method: Method = meta.method.parse()?;
        let basis = family.orthonormal_basis(meta.n, meta.degree)?;
        ensure!(
            basis.len() == rows,
            "metadata (n = {}, degree = {}) implies {} basis functions, matrix has {rows}",
            meta.n,
            meta.degree,
            basis.len()
        );
        let exps: Vec<Vec<u32>> = basis
            .indices()
            .iter()
            .map(|a| a.exponents().to_vec())
            .collect();
        ensure!(
            exps == meta.exponents,
            "metadata exponents do not match the graded ordering"
        );
        let blocks: Vec<BlockMeta> = basis
            .degree_offsets()
            .iter()
            .map(|b| BlockMeta {
                degree: b.degree,
                start: b.start,
                size: b.size,
            })
            .collect();
        ensure!(
            blocks == meta.blocks,
            "metadata blocks do not match the graded ordering"
        );
        ensure!(
            meta.equilibrium.len() == meta.n,
            "metadata equilibrium has {} entries, expected {}",
            meta.equilibrium.len(),
            meta.n
        );
        if !(meta.rescale > 0.0 && meta.rescale.is_finite()) {
            bail!("metadata rescale must be positive, got {}", meta.rescale);
        }
        let k = KoopmanMatrix::new(DMatrix::from_row_slice(rows, rows, &values), basis, method)?;
        Ok((k, meta))
    };
    inner().with_context(|| format!("malformed Koopman matrix file {}", path.display()))
}

/// Writes `# comment` lines, a header and string rows.
pub fn write_table(
    path: &Path,
    comments: &[String],
    header: &[String],
    rows: &[Vec<String>],
) -> Result<()> {
    let mut w = create(path)?;
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    let mut cw = csv::Writer::from_writer(w);
    cw.write_record(header)?;
    for r in rows {
        cw.write_record(r)?;
    }
    cw.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_text_round_trip() {
        let xs = DMatrix::from_row_slice(2, 2, &[0.1, -0.0, 1.0 / 3.0, 2.5e-300]);
        let ys = DMatrix::from_row_slice(2, 2, &[f64::MIN_POSITIVE, -7.0, 1e300, 0.2]);
        let data = SnapshotSet::new(xs, ys, Some(0.5)).unwrap();
        let meta = SnapshotMeta {
            n: 2,
            dt: Some(0.5),
            seed: Some(3),
            system: Some("vanderpol".into()),
            sample_box: Some(vec![-1.0, 1.0, -1.0, 1.0]),
            substeps: Some(50),
            rescale: Some("0.5".into()),
            equilibrium: Some(vec![0.0, 0.0]),
        };
        let dir = std::env::temp_dir().join(format!("aedmd-io-{}", std::process::id()));
        let path = dir.join("s.csv");
        write_snapshots(&path, &data, &meta).unwrap();
        let back = read_snapshots(&path).unwrap();
        fs::remove_dir_all(&dir).ok();
        assert_eq!(back.meta, meta);
        for (a, b) in back
            .data
            .xs()
            .iter()
            .chain(back.data.ys().iter())
            .zip(data.xs().iter().chain(data.ys().iter()))
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn snapshot_header_checked() {
        assert!(parse_snapshots("x1,y2\n0,0\n").is_err());
        assert!(parse_snapshots("# n = 2\nx1,y1\n0,0\n").is_err());
        assert!(parse_snapshots("x1,y1\n0,abc\n").is_err());
        assert!(parse_snapshots("x1,y1\n").is_err());
        let ok = parse_snapshots("# n = 1\n# dt = 0.5\nx1,y1\n0.25,0.5\n").unwrap();
        assert_eq!(ok.meta.dt, Some(0.5));
        assert_eq!(ok.data.len(), 1);
    }
}
