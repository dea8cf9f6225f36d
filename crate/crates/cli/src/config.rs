//! Command-line arguments and the optional TOML run configuration.
//!
//! The config file uses flat keys named after the long flags (`m`, `box`,
//! `drop-out-of-domain`, ...). A flag given on the command line always wins
//! over the file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

pub const SEED_ENV: &str = "ANALYTIC_EDMD_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "analytic-edmd",
    version,
    about = "Koopman spectra and principal eigenfunctions from snapshot data"
)]
pub struct Cli {
    /// TOML file with default values for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a benchmark system and write snapshot pairs.
    Generate(GenerateArgs),
    /// Taylor coefficients of a sampled function.
    Project(ProjectArgs),
    /// Fit a Koopman matrix to a snapshot file.
    Fit(FitArgs),
    /// Block eigenvalues and their lattice labels.
    Eig(EigArgs),
    /// Principal eigenfunctions on a grid.
    Eigfun(EigfunArgs),
    /// Spectra of analytic EDMD, EDMD, DMD and kernel EDMD side by side.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct OutputArg {
    /// Directory for the files a command writes (default: current directory).
    #[arg(long, value_name = "DIR")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// cubic1d, vanderpol, rotating2d or linear:a1,a2,...
    #[arg(long)]
    pub system: Option<String>,
    /// Number of snapshot pairs.
    #[arg(long)]
    pub m: Option<usize>,
    /// Sampling box as lo1,hi1,lo2,hi2,... (one pair is broadcast to all axes).
    #[arg(long = "box", value_delimiter = ',', allow_hyphen_values = true)]
    pub sample_box: Option<Vec<f64>>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Falls back to $ANALYTIC_EDMD_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// RK4 steps per sampling interval (default keeps the step at or below 0.01).
    #[arg(long)]
    pub substeps: Option<usize>,
    /// Rescale factor recorded for later fits: a number or auto[:margin].
    #[arg(long)]
    pub rescale: Option<String>,
    /// Equilibrium recorded for later fits.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub equilibrium: Option<Vec<f64>>,
    #[command(flatten)]
    pub out: OutputArg,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Built-in function of x1: log1p, exp, sin, cos or inv-sqrt (x/sqrt(1-x^2)).
    #[arg(long, conflicts_with = "input")]
    pub function: Option<String>,
    /// CSV of samples with header x1,...,xn,f.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Number of random sample points for --function.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long = "box", value_delimiter = ',', allow_hyphen_values = true)]
    pub sample_box: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub policy: Option<String>,
    /// Expansion point.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub equilibrium: Option<Vec<f64>>,
    /// Use the orthonormal projection instead of the oblique one.
    #[arg(long)]
    pub orthonormal: bool,
    #[command(flatten)]
    pub out: OutputArg,
}

#[derive(Debug, Args)]
pub struct FitOptions {
    /// Snapshot CSV (default: <output>/snapshots.csv).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// szego or exponential.
    #[arg(long)]
    pub kernel: Option<String>,
    /// Overrides the equilibrium stored in the snapshot file.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub equilibrium: Option<Vec<f64>>,
    /// Maximum total degree of the monomial basis.
    #[arg(long)]
    pub degree: Option<usize>,
    /// exact, pinv[:rtol], ridge:gamma or feature[:rtol].
    #[arg(long)]
    pub policy: Option<String>,
    /// A number or auto[:margin]; overrides the value stored in the snapshot file.
    #[arg(long)]
    pub rescale: Option<String>,
    /// Drop pairs that leave the kernel domain instead of failing.
    #[arg(long)]
    pub drop_out_of_domain: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub fit: FitOptions,
    /// analytic, nonortho or edmd.
    #[arg(long)]
    pub method: Option<String>,
    #[command(flatten)]
    pub out: OutputArg,
}

#[derive(Debug, Args)]
pub struct EigArgs {
    /// Koopman matrix CSV (default: <output>/koopman.csv).
    #[arg(long)]
    pub koopman: Option<PathBuf>,
    /// Sampling time, when the matrix metadata has none.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Largest lattice distance that still counts as a match.
    #[arg(long)]
    pub tol: Option<f64>,
    #[command(flatten)]
    pub out: OutputArg,
}

#[derive(Debug, Args)]
pub struct EigfunArgs {
    #[arg(long)]
    pub koopman: Option<PathBuf>,
    /// lo,hi,count for one axis; repeat once per axis or give one for all.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Vec<String>,
    /// Eigenfunction indices to evaluate (default: all).
    #[arg(long, value_delimiter = ',')]
    pub index: Vec<usize>,
    /// Also write the Taylor coefficients in original coordinates.
    #[arg(long)]
    pub coefficients: bool,
    #[command(flatten)]
    pub out: OutputArg,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub fit: FitOptions,
    #[arg(long)]
    pub tol: Option<f64>,
    #[command(flatten)]
    pub out: OutputArg,
}

/// A config value that may be written as a number or as text.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Int(i64),
    Float(f64),
    Text(String),
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Int(v) => write!(f, "{v}"),
            Scalar::Float(v) => write!(f, "{v}"),
            Scalar::Text(v) => f.write_str(v),
        }
    }
}

/// `[0, 1.5]` or `"0,1.5"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum NumberList {
    List(Vec<Scalar>),
    Text(String),
}

impl NumberList {
    fn to_vec(&self, key: &str) -> Result<Vec<f64>> {
        let parts: Vec<String> = match self {
            NumberList::List(v) => v.iter().map(|s| s.to_string()).collect(),
            NumberList::Text(t) => t.split(',').map(|s| s.trim().to_string()).collect(),
        };
        parts
            .iter()
            .map(|p| {
                p.parse::<f64>()
                    .with_context(|| format!("config key '{key}': bad number '{p}'"))
            })
            .collect()
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub system: Option<String>,
    pub input: Option<PathBuf>,
    pub koopman: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub kernel: Option<String>,
    pub equilibrium: Option<NumberList>,
    pub degree: Option<usize>,
    pub m: Option<usize>,
    #[serde(rename = "box")]
    pub sample_box: Option<NumberList>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
    pub substeps: Option<usize>,
    pub policy: Option<String>,
    pub rescale: Option<Scalar>,
    pub method: Option<String>,
    pub tol: Option<f64>,
    #[serde(alias = "drop_out_of_domain")]
    pub drop_out_of_domain: Option<bool>,
    pub function: Option<String>,
    pub grid: Option<Vec<String>>,
    pub index: Option<Vec<usize>>,
}

impl FileConfig {
    pub fn equilibrium(&self) -> Result<Option<Vec<f64>>> {
        self.equilibrium
            .as_ref()
            .map(|l| l.to_vec("equilibrium"))
            .transpose()
    }

    pub fn sample_box(&self) -> Result<Option<Vec<f64>>> {
        self.sample_box
            .as_ref()
            .map(|l| l.to_vec("box"))
            .transpose()
    }

    pub fn rescale(&self) -> Option<String> {
        self.rescale.as_ref().map(|s| s.to_string())
    }
}

pub fn load_file(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Flag, then config file, then `$ANALYTIC_EDMD_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}='{v}' is not an unsigned integer")),
        Err(_) => Ok(0),
    }
}

pub fn output_dir(out: &OutputArg, file: &FileConfig) -> PathBuf {
    out.output
        .clone()
        .or_else(|| file.output.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

/// How fit data are mapped by `z = x* + ρ(x − x*)` before the kernel sees them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rescale {
    Factor(f64),
    /// `ρ = margin / max |x − x*|` over the data.
    Auto {
        margin: f64,
    },
}

pub const DEFAULT_AUTO_MARGIN: f64 = 0.9;

impl FromStr for Rescale {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("auto") {
            let margin = match rest.strip_prefix(':') {
                Some(m) => m
                    .trim()
                    .parse::<f64>()
                    .with_context(|| format!("rescale margin '{m}'"))?,
                None if rest.is_empty() => DEFAULT_AUTO_MARGIN,
                None => {
                    bail!("invalid rescale '{s}' (expected a positive number or auto[:margin])")
                }
            };
            if !(margin > 0.0 && margin.is_finite()) {
                bail!("rescale margin must be positive, got {margin}");
            }
            return Ok(Rescale::Auto { margin });
        }
        let rho: f64 = s.parse().with_context(|| {
            format!("invalid rescale '{s}' (expected a positive number or auto[:margin])")
        })?;
        if !(rho > 0.0 && rho.is_finite()) {
            bail!("rescale factor must be positive, got {rho}");
        }
        Ok(Rescale::Factor(rho))
    }
}

impl fmt::Display for Rescale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rescale::Factor(rho) => write!(f, "{rho}"),
            Rescale::Auto { margin } => write!(f, "auto:{margin}"),
        }
    }
}

/// One axis of an evaluation grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.low];
        }
        let step = (self.high - self.low) / (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                if i + 1 == self.count {
                    self.high
                } else {
                    self.low + step * i as f64
                }
            })
            .collect()
    }
}

impl FromStr for GridAxis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [lo, hi, count] = parts[..] else {
            bail!("invalid grid '{s}' (expected lo,hi,count)");
        };
        let low: f64 = lo.parse().with_context(|| format!("grid low '{lo}'"))?;
        let high: f64 = hi.parse().with_context(|| format!("grid high '{hi}'"))?;
        let count: usize = count
            .parse()
            .with_context(|| format!("grid count '{count}'"))?;
        if !low.is_finite() || !high.is_finite() || low > high {
            bail!("invalid grid '{s}': need finite lo <= hi");
        }
        if count == 0 || (count == 1 && low != high) {
            bail!("invalid grid '{s}': count must be >= 2 (or 1 with lo = hi)");
        }
        Ok(GridAxis { low, high, count })
    }
}
