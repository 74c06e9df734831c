//! Experiment runner behind the `qcf` binary.
//!
//! Every subcommand writes one table (CSV with `#` config-echo lines, or
//! JSON) and returns an exit status: 0 when every check of the run holds,
//! 1 when a check fails or a computation errors, 2 for usage and config
//! errors.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::fit::loglog_slope;
use crate::lattice::{Displacement, IndexRange};
use crate::operators::{assemble_ea, assemble_eqcf, assemble_la, assemble_llqc, assemble_lqcf, DenseOperator};
use crate::potentials::{lennard_jones, patch_residual, Coefficients, DomainSpec};
use crate::solver::{error_report, ErrorReport, ForceField};
use crate::stability::{
    coercivity_row, eigen_scan_row, infsup_2, infsup_p_upper, rdd_margin, BoundKind, InfSupScanRow,
};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const PATCH_TOLERANCE: f64 = 1e-13;
const EIGEN_TOLERANCE: f64 = 1e-10;
const EXACT_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Parser)]
#[command(name = "qcf", version, about = "Force-based quasicontinuum chain experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ghost-force residuals of the QCF forces at uniform states.
    PatchTest(Flags),
    /// Smallest Rayleigh quotient of the QCF operator and the unstable witness.
    Coercivity(Flags),
    /// Inf-sup lower bound, exact 2-norm value and upper bounds of the conjugate operator.
    Infsup(Flags),
    /// QCF strain error against the atomistic reference and truncation estimates.
    Convergence(Flags),
    /// Nonzero (row, col, value) triples of one assembled operator.
    DumpOperator(Flags),
    /// Spectrum summary of the QCF operator (exploratory).
    EigScan(Flags),
}

impl Command {
    fn parts(&self) -> (&'static str, &Flags) {
        match self {
            Command::PatchTest(f) => ("patch-test", f),
            Command::Coercivity(f) => ("coercivity", f),
            Command::Infsup(f) => ("infsup", f),
            Command::Convergence(f) => ("convergence", f),
            Command::DumpOperator(f) => ("dump-operator", f),
            Command::EigScan(f) => ("eig-scan", f),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum PotentialKind {
    /// Lennard-Jones `r^-12 - 2 r^-6`.
    Lj,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum OperatorKind {
    #[value(name = "La")]
    La,
    #[value(name = "Llqc")]
    Llqc,
    #[value(name = "Lqcf")]
    Lqcf,
    #[value(name = "Ea")]
    Ea,
    #[value(name = "Eqcf")]
    Eqcf,
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.to_possible_value().expect("no skipped variants").get_name())
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.to_possible_value().expect("no skipped variants").get_name())
    }
}

/// Flags shared by all subcommands. Unset flags fall back to the `--config`
/// file, then to per-subcommand defaults.
#[derive(Clone, Debug, Default, Args)]
pub struct Flags {
    /// Nearest-neighbour coefficient φ″(F).
    #[arg(long = "phiF", allow_negative_numbers = true)]
    pub phi_f: Option<f64>,
    /// Next-nearest-neighbour coefficient φ″(2F).
    #[arg(long = "phi2F", allow_negative_numbers = true)]
    pub phi_2f: Option<f64>,
    /// Derive the coefficients from a pair potential at stretch --F.
    #[arg(long, value_enum)]
    pub potential: Option<PotentialKind>,
    /// Macroscopic stretch.
    #[arg(long = "F")]
    pub stretch: Option<f64>,
    /// Stretch grid for patch-test.
    #[arg(long = "F-list", value_delimiter = ',')]
    pub stretch_list: Vec<f64>,
    /// Computational half-widths N.
    #[arg(long = "N-list", value_delimiter = ',')]
    pub n_list: Vec<usize>,
    /// Fixed atomistic half-width K.
    #[arg(long = "K", conflicts_with = "k_ratio")]
    pub k: Option<usize>,
    /// K = max(2, floor(ratio N)).
    #[arg(long = "K-ratio")]
    pub k_ratio: Option<f64>,
    /// Reference half-width M = factor N.
    #[arg(long = "M-factor")]
    pub m_factor: Option<usize>,
    /// Exponents p for the inf-sup upper bounds.
    #[arg(long = "p-list", value_delimiter = ',')]
    pub p_list: Vec<f64>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// key = value file with the same keys as the long flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Operator for dump-operator.
    #[arg(long, value_enum, ignore_case = true)]
    pub operator: Option<OperatorKind>,
    /// Load for convergence: cos, const:<value> or random.
    #[arg(long)]
    pub load: Option<String>,
}

impl Flags {
    /// Field-wise `self` if set, else `other`.
    fn or(self, other: Flags) -> Flags {
        fn list<T>(a: Vec<T>, b: Vec<T>) -> Vec<T> {
            if a.is_empty() {
                b
            } else {
                a
            }
        }
        // --K and --K-ratio given on the command line both replace the file's K rule
        let k_rule_set = self.k.is_some() || self.k_ratio.is_some();
        Flags {
            phi_f: self.phi_f.or(other.phi_f),
            phi_2f: self.phi_2f.or(other.phi_2f),
            potential: self.potential.or(other.potential),
            stretch: self.stretch.or(other.stretch),
            stretch_list: list(self.stretch_list, other.stretch_list),
            n_list: list(self.n_list, other.n_list),
            k: if k_rule_set { self.k } else { other.k },
            k_ratio: if k_rule_set { self.k_ratio } else { other.k_ratio },
            m_factor: self.m_factor.or(other.m_factor),
            p_list: list(self.p_list, other.p_list),
            jobs: self.jobs.or(other.jobs),
            out: self.out.or(other.out),
            format: self.format.or(other.format),
            seed: self.seed.or(other.seed),
            config: self.config,
            operator: self.operator.or(other.operator),
            load: self.load.or(other.load),
        }
    }
}

fn parse_scalar<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| e.to_string())
}

fn parse_list<T: FromStr>(value: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    value.split(',').map(|v| parse_scalar(v.trim())).collect()
}

fn parse_enum<T: ValueEnum>(value: &str) -> std::result::Result<T, String> {
    T::from_str(value, true)
}

/// Reads a flat `key = value` config file. `#` starts a comment.
pub fn read_config_file(path: &Path) -> Result<Flags> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text, &path.display().to_string())
}

/// Parses config text; diagnostics name the source, line and field.
pub fn parse_config(text: &str, source: &str) -> Result<Flags> {
    let mut flags = Flags::default();
    for (number, raw) in text.lines().enumerate() {
        let line_no = number + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("{source}:{line_no}: expected `key = value`, got `{line}`")));
        };
        let (key, value) = (key.trim().trim_start_matches("--"), value.trim());
        let field_error = |msg: String| Error::Config(format!("{source}:{line_no}: field `{key}`: {msg}"));
        match key {
            "phiF" => flags.phi_f = Some(parse_scalar(value).map_err(field_error)?),
            "phi2F" => flags.phi_2f = Some(parse_scalar(value).map_err(field_error)?),
            "potential" => flags.potential = Some(parse_enum(value).map_err(field_error)?),
            "F" => flags.stretch = Some(parse_scalar(value).map_err(field_error)?),
            "F-list" => flags.stretch_list = parse_list(value).map_err(field_error)?,
            "N-list" => flags.n_list = parse_list(value).map_err(field_error)?,
            "K" => flags.k = Some(parse_scalar(value).map_err(field_error)?),
            "K-ratio" => flags.k_ratio = Some(parse_scalar(value).map_err(field_error)?),
            "M-factor" => flags.m_factor = Some(parse_scalar(value).map_err(field_error)?),
            "p-list" => flags.p_list = parse_list(value).map_err(field_error)?,
            "jobs" => flags.jobs = Some(parse_scalar(value).map_err(field_error)?),
            "out" => flags.out = Some(PathBuf::from(value)),
            "format" => flags.format = Some(parse_enum(value).map_err(field_error)?),
            "seed" => flags.seed = Some(parse_scalar(value).map_err(field_error)?),
            "operator" => flags.operator = Some(parse_enum(value).map_err(field_error)?),
            "load" => flags.load = Some(value.to_string()),
            _ => return Err(field_error("unknown key".into())),
        }
        if key == "K" && flags.k.is_some() && flags.k_ratio.is_some() || key == "K-ratio" && flags.k.is_some() {
            return Err(field_error("K and K-ratio are mutually exclusive".into()));
        }
    }
    Ok(flags)
}

/// How K is chosen for each N.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KRule {
    Fixed(usize),
    Ratio(f64),
    /// Every admissible `2 ≤ K ≤ N/2`.
    All,
}

impl fmt::Display for KRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KRule::Fixed(k) => write!(f, "K = {k}"),
            KRule::Ratio(r) => write!(f, "K = max(2, floor({r} N))"),
            KRule::All => f.write_str("all 2 <= K <= N/2"),
        }
    }
}

impl KRule {
    fn values(&self, n: usize) -> Vec<usize> {
        match *self {
            KRule::Fixed(k) => vec![k],
            KRule::Ratio(r) => vec![((r * n as f64).floor() as usize).max(2)],
            KRule::All => (2..=n / 2).collect(),
        }
    }
}

/// Load choice for convergence runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum LoadSpec {
    Cosine,
    Constant(f64),
    /// iid uniform on [-1, 1], seeded per N.
    Random,
}

impl FromStr for LoadSpec {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "cos" => Ok(LoadSpec::Cosine),
            "random" => Ok(LoadSpec::Random),
            other => match other.strip_prefix("const:") {
                Some(v) => Ok(LoadSpec::Constant(parse_scalar(v.trim())?)),
                None => Err(format!("unknown load `{other}` (expected cos, const:<value> or random)")),
            },
        }
    }
}

impl fmt::Display for LoadSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadSpec::Cosine => f.write_str("cos"),
            LoadSpec::Constant(v) => write!(f, "const:{v}"),
            LoadSpec::Random => f.write_str("random"),
        }
    }
}

impl LoadSpec {
    fn field(&self, spec: &DomainSpec, seed: u64) -> ForceField {
        match *self {
            LoadSpec::Cosine => ForceField::cosine(),
            LoadSpec::Constant(v) => ForceField::constant(v),
            LoadSpec::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(spec.n() as u64));
                let range = IndexRange::sites(spec.m());
                ForceField::Samples(Displacement::from_fn(range, |_| rng.random_range(-1.0..=1.0)))
            }
        }
    }
}

/// Where the linearization coefficients come from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum CoefficientSource {
    Given,
    Potential { potential: PotentialKind, stretch: f64 },
}

/// Fully resolved run configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub coefficients: Coefficients,
    pub source: CoefficientSource,
    pub stretch_list: Vec<f64>,
    pub n_list: Vec<usize>,
    pub k_rule: KRule,
    pub m_factor: usize,
    pub p_list: Vec<f64>,
    pub jobs: usize,
    pub out: PathBuf,
    pub format: Format,
    pub seed: u64,
    pub operator: OperatorKind,
    pub load: LoadSpec,
}

struct Defaults {
    coefficients: (f64, f64),
    n_list: &'static [usize],
    k_rule: KRule,
}

fn defaults(subcommand: &str) -> Defaults {
    let (coefficients, n_list, k_rule) = match subcommand {
        "patch-test" => ((72.0, 0.0), &[16, 32, 64][..], KRule::All),
        "coercivity" => ((1.0, -0.2), &[256, 512, 1024, 2048][..], KRule::Ratio(0.25)),
        "infsup" => ((1.0, -0.05), &[64, 128, 256, 512, 1024][..], KRule::Ratio(0.25)),
        "dump-operator" => ((1.0, 1.0), &[8][..], KRule::Fixed(2)),
        "eig-scan" => ((1.0, -0.2), &[16, 32, 64][..], KRule::Ratio(0.25)),
        _ => ((1.0, -0.05), &[16, 32, 64, 128][..], KRule::Ratio(0.25)),
    };
    Defaults {
        coefficients,
        n_list,
        k_rule,
    }
}

impl RunConfig {
    /// Merges flags over the config file and the subcommand defaults.
    pub fn resolve(subcommand: &str, flags: &Flags) -> Result<RunConfig> {
        let flags = match &flags.config {
            Some(path) => flags.clone().or(read_config_file(path)?),
            None => flags.clone(),
        };
        let d = defaults(subcommand);
        let out = flags
            .out
            .clone()
            .ok_or_else(|| Error::InvalidArgument("the following required argument was not provided: --out <OUT>".into()))?;

        let explicit = flags.phi_f.is_some() || flags.phi_2f.is_some();
        let (coefficients, source) = if subcommand == "patch-test" {
            if explicit {
                return Err(Error::Config("patch-test evaluates a potential; --phiF/--phi2F do not apply".into()));
            }
            (Coefficients::new(d.coefficients.0, d.coefficients.1)?, CoefficientSource::Given)
        } else if let Some(potential) = flags.potential {
            if explicit {
                return Err(Error::Config("give either --potential with --F or --phiF/--phi2F, not both".into()));
            }
            let stretch = flags
                .stretch
                .ok_or_else(|| Error::Config("--potential needs --F <stretch>".into()))?;
            let c = match potential {
                PotentialKind::Lj => Coefficients::from_potential(&lennard_jones(), stretch)?,
            };
            (c, CoefficientSource::Potential { potential, stretch })
        } else {
            let c = Coefficients::new(
                flags.phi_f.unwrap_or(d.coefficients.0),
                flags.phi_2f.unwrap_or(d.coefficients.1),
            )?;
            (c, CoefficientSource::Given)
        };

        let stretch_list = if !flags.stretch_list.is_empty() {
            flags.stretch_list.clone()
        } else if let Some(f) = flags.stretch {
            vec![f]
        } else {
            vec![0.9, 1.0, 1.1]
        };
        if stretch_list.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::Config("stretches must be positive".into()));
        }
        let k_rule = match (flags.k, flags.k_ratio) {
            (Some(_), Some(_)) => return Err(Error::Config("--K and --K-ratio are mutually exclusive".into())),
            (Some(k), None) => KRule::Fixed(k),
            (None, Some(r)) if r > 0.0 && r <= 0.5 => KRule::Ratio(r),
            (None, Some(r)) => return Err(Error::Config(format!("K-ratio must lie in (0, 1/2], got {r}"))),
            (None, None) => d.k_rule,
        };
        let p_list = if flags.p_list.is_empty() { vec![1.0, 2.0, 4.0] } else { flags.p_list.clone() };
        if p_list.iter().any(|p| !(*p >= 1.0) || p.is_infinite()) {
            return Err(Error::Config("p-list entries must satisfy 1 <= p < inf".into()));
        }
        let load = match &flags.load {
            Some(s) => s.parse().map_err(Error::Config)?,
            None => LoadSpec::Cosine,
        };
        let cfg = RunConfig {
            subcommand: subcommand.to_string(),
            coefficients,
            source,
            stretch_list,
            n_list: if flags.n_list.is_empty() { d.n_list.to_vec() } else { flags.n_list.clone() },
            k_rule,
            m_factor: flags.m_factor.unwrap_or(4),
            p_list,
            jobs: flags.jobs.unwrap_or(1).max(1),
            out,
            format: flags.format.unwrap_or_default(),
            seed: flags.seed.unwrap_or(0),
            operator: flags.operator.unwrap_or(OperatorKind::Eqcf),
            load,
        };
        cfg.domains()?;
        Ok(cfg)
    }

    /// Every (N, K) point of the run, validated.
    pub fn domains(&self) -> Result<Vec<DomainSpec>> {
        let mut out = Vec::new();
        for &n in &self.n_list {
            for k in self.k_rule.values(n) {
                out.push(DomainSpec::with_factor(n, k, self.m_factor)?);
            }
        }
        if out.is_empty() {
            return Err(Error::Config("no admissible (N, K) pairs".into()));
        }
        Ok(out)
    }

    fn list<T: fmt::Display>(items: &[T]) -> String {
        items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }

    /// Config echo as ordered key/value pairs.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![("subcommand", self.subcommand.clone())];
        match self.source {
            CoefficientSource::Given if self.subcommand == "patch-test" => out.push(("potential", "lj".into())),
            CoefficientSource::Given => {}
            CoefficientSource::Potential { potential, stretch } => {
                out.push(("potential", format!("{potential:?}").to_lowercase()));
                out.push(("F", stretch.to_string()));
            }
        }
        if self.subcommand != "patch-test" {
            out.push(("phiF", self.coefficients.phi_f.to_string()));
            out.push(("phi2F", self.coefficients.phi_2f.to_string()));
        }
        out.extend([
            ("F-list", Self::list(&self.stretch_list)),
            ("N-list", Self::list(&self.n_list)),
            ("K-rule", self.k_rule.to_string()),
            ("M-factor", self.m_factor.to_string()),
            ("p-list", Self::list(&self.p_list)),
            ("jobs", self.jobs.to_string()),
            ("out", self.out.display().to_string()),
            ("format", self.format.to_string()),
            ("seed", self.seed.to_string()),
            ("operator", self.operator.to_string()),
            ("load", self.load.to_string()),
        ]);
        out
    }
}

/// Results of one subcommand, ready to write.
pub struct Report<R> {
    pub rows: Vec<R>,
    pub summary: Map<String, Value>,
    pub passed: bool,
}

fn write_report<R: Serialize>(cfg: &RunConfig, report: &Report<R>) -> Result<()> {
    let io = |e: std::io::Error| Error::Config(format!("cannot write {}: {e}", cfg.out.display()));
    let mut buf: Vec<u8> = Vec::new();
    match cfg.format {
        Format::Csv => {
            for (k, v) in cfg.echo() {
                writeln!(buf, "# {k} = {v}").map_err(io)?;
            }
            for (k, v) in &report.summary {
                let v = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                writeln!(buf, "# summary.{k} = {v}").map_err(io)?;
            }
            let mut w = csv::Writer::from_writer(&mut buf);
            for row in &report.rows {
                w.serialize(row).map_err(|e| Error::Config(format!("csv: {e}")))?;
            }
            w.flush().map_err(io)?;
        }
        Format::Json => {
            let config: Map<String, Value> = cfg.echo().into_iter().map(|(k, v)| (k.to_string(), Value::String(v))).collect();
            let doc = json!({
                "config": config,
                "summary": report.summary,
                "passed": report.passed,
                "rows": report.rows,
            });
            serde_json::to_writer_pretty(&mut buf, &doc).map_err(|e| Error::Config(format!("json: {e}")))?;
            buf.push(b'\n');
        }
    }
    fs::write(&cfg.out, buf).map_err(io)
}

/// Maps `f` over `items` on a pool of `jobs` threads, keeping input order.
pub fn par_map<T, R, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

fn slope_entry(summary: &mut Map<String, Value>, key: &str, xs: &[f64], ys: &[f64]) {
    match loglog_slope(xs, ys) {
        Ok(s) => summary.insert(key.into(), json!(s)),
        Err(e) => summary.insert(key.into(), json!(format!("not fitted: {e}"))),
    };
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PatchRow {
    #[serde(rename = "F")]
    pub stretch: f64,
    #[serde(rename = "F_eff")]
    pub stretch_eff: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub max_residual: f64,
    pub scale: f64,
    pub relative: f64,
    pub pass: bool,
}

pub fn cmd_patch_test(cfg: &RunConfig) -> Result<Report<PatchRow>> {
    let mut points = Vec::new();
    for &f in &cfg.stretch_list {
        for spec in cfg.domains()? {
            points.push((f, spec));
        }
    }
    let lj = lennard_jones();
    let rows = par_map(cfg.jobs, &points, |(f, spec)| {
        let r = patch_residual(*f, spec, &lj)?;
        Ok(PatchRow {
            stretch: *f,
            stretch_eff: r.stretch,
            n: spec.n(),
            k: spec.k(),
            max_residual: r.max_residual,
            scale: r.scale,
            relative: r.relative(),
            pass: r.relative() <= PATCH_TOLERANCE,
        })
    })?;
    let worst = rows.iter().map(|r| r.relative).fold(0.0, f64::max);
    let mut summary = Map::new();
    summary.insert("max_relative_residual".into(), json!(worst));
    summary.insert("tolerance".into(), json!(PATCH_TOLERANCE));
    let passed = rows.iter().all(|r| r.pass);
    Ok(Report { rows, summary, passed })
}

pub fn cmd_coercivity(cfg: &RunConfig) -> Result<Report<crate::stability::CoercivityScanRow>> {
    let c = cfg.coefficients;
    let rows = par_map(cfg.jobs, &cfg.domains()?, |spec| coercivity_row(&c, spec))?;
    let mut summary = Map::new();
    let feasible = rows.iter().all(|r| match r.witness_value {
        Some(w) => w >= r.rayleigh_min - EIGEN_TOLERANCE * r.rayleigh_min.abs().max(1.0),
        None => true,
    });
    summary.insert("witness_feasible".into(), json!(feasible));
    if c.phi_2f == 0.0 {
        summary.insert("fit".into(), json!("not attempted: phi2F = 0"));
    } else {
        let negative: Vec<_> = rows.iter().filter(|r| r.rayleigh_min < 0.0).collect();
        if let Some(first) = negative.first() {
            summary.insert("first_negative_N".into(), json!(first.n));
        }
        let xs: Vec<f64> = negative.iter().map(|r| r.n as f64).collect();
        let ys: Vec<f64> = negative.iter().map(|r| r.rayleigh_min.abs()).collect();
        slope_entry(&mut summary, "slope_abs_rayleigh_min_vs_N", &xs, &ys);
    }
    Ok(Report {
        rows,
        summary,
        passed: feasible,
    })
}

pub fn cmd_infsup(cfg: &RunConfig) -> Result<Report<InfSupScanRow>> {
    let c = cfg.coefficients;
    let with_upper = c.phi_2f != 0.0;
    let margin_positive = c.qcf_margin() > 0.0;
    let blocks = par_map(cfg.jobs, &cfg.domains()?, |spec| {
        let e = assemble_eqcf(&c, spec);
        let mut rows = Vec::new();
        let row = |p, kind, value| InfSupScanRow {
            n: spec.n(),
            k: spec.k(),
            p,
            kind,
            value,
        };
        let margin = rdd_margin(&e)?;
        if margin_positive {
            rows.push(row(f64::INFINITY, BoundKind::LowerBound, 0.5 * margin));
        }
        rows.push(row(2.0, BoundKind::Exact, infsup_2(&e)?));
        if with_upper {
            for &p in &cfg.p_list {
                rows.push(row(p, BoundKind::UpperBound, infsup_p_upper(&c, spec, p)?));
            }
        }
        Ok((margin, rows))
    })?;
    let mut summary = Map::new();
    let margin_exact = blocks.iter().all(|(m, _)| (m - c.qcf_margin()).abs() <= EXACT_TOLERANCE);
    summary.insert("rdd_margin_exact".into(), json!(margin_exact));
    let rows: Vec<InfSupScanRow> = blocks.into_iter().flat_map(|(_, r)| r).collect();

    let mut sandwich = true;
    for exact in rows.iter().filter(|r| r.kind == BoundKind::Exact) {
        for upper in rows.iter().filter(|r| r.kind == BoundKind::UpperBound && r.p == 2.0 && r.n == exact.n && r.k == exact.k) {
            sandwich &= exact.value <= upper.value * (1.0 + EIGEN_TOLERANCE);
        }
        for lower in rows.iter().filter(|r| r.kind == BoundKind::LowerBound && r.n == exact.n && r.k == exact.k) {
            summary.insert("lower_bound".into(), json!(lower.value));
        }
    }
    summary.insert("sandwich_p2".into(), json!(sandwich));
    if !margin_positive {
        summary.insert("lower_bound".into(), json!("none: phiF + 8 phi2F <= 0"));
    }
    let mut series = vec![(2.0, BoundKind::Exact)];
    if with_upper {
        series.extend(cfg.p_list.iter().map(|&p| (p, BoundKind::UpperBound)));
    }
    for (p, kind) in series {
        let pts: Vec<_> = rows.iter().filter(|r| r.kind == kind && r.p == p).collect();
        let xs: Vec<f64> = pts.iter().map(|r| r.n as f64).collect();
        let ys: Vec<f64> = pts.iter().map(|r| r.value).collect();
        let name = match kind {
            BoundKind::Exact => format!("slope_exact_p{p}"),
            _ => format!("slope_upper_p{p}"),
        };
        slope_entry(&mut summary, &name, &xs, &ys);
    }
    Ok(Report {
        rows,
        summary,
        passed: margin_exact && sandwich,
    })
}

pub fn cmd_convergence(cfg: &RunConfig) -> Result<Report<ErrorReport>> {
    let c = cfg.coefficients;
    let rows = par_map(cfg.jobs, &cfg.domains()?, |spec| {
        error_report(&c, &cfg.load.field(spec, cfg.seed), spec)
    })?;
    let mut summary = Map::new();
    let mut passed = true;
    for r in &rows {
        for (name, ok) in r.inequalities() {
            if !ok {
                passed = false;
                log::error!("N = {}, K = {}: {name} violated", r.n, r.k);
            }
        }
    }
    summary.insert("inequalities_hold".into(), json!(passed));
    let xs: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.err_strain_inf).collect();
    slope_entry(&mut summary, "slope_err_vs_eps", &xs, &ys);
    Ok(Report { rows, summary, passed })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TripleRow {
    pub row: i64,
    pub col: i64,
    pub value: f64,
}

/// Assembles the requested operator. `La`, `Llqc` and `Ea` live on the
/// computational domain `-N..=N`.
pub fn operator_for(kind: OperatorKind, c: &Coefficients, spec: &DomainSpec) -> Result<DenseOperator> {
    let (n, eps) = (spec.n(), spec.eps());
    match kind {
        OperatorKind::La => assemble_la(c, n, eps),
        OperatorKind::Llqc => assemble_llqc(c, n, eps),
        OperatorKind::Lqcf => Ok(assemble_lqcf(c, spec)),
        OperatorKind::Ea => assemble_ea(c, n),
        OperatorKind::Eqcf => Ok(assemble_eqcf(c, spec)),
    }
}

pub fn cmd_dump_operator(cfg: &RunConfig) -> Result<Report<TripleRow>> {
    let spec = *cfg.domains()?.first().expect("domains is non-empty");
    let op = operator_for(cfg.operator, &cfg.coefficients, &spec)?;
    let scale = op.matrix().amax().max(f64::MIN_POSITIVE);
    let mut summary = Map::new();
    summary.insert("N".into(), json!(spec.n()));
    summary.insert("K".into(), json!(spec.k()));
    summary.insert("rows".into(), json!(op.rows().to_string()));
    summary.insert("cols".into(), json!(op.cols().to_string()));
    let mut passed = true;
    if matches!(cfg.operator, OperatorKind::La | OperatorKind::Llqc | OperatorKind::Lqcf) {
        let worst = op.matrix().row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max);
        let ok = worst <= 1e-12 * scale;
        summary.insert("max_abs_row_sum".into(), json!(worst));
        passed &= ok;
    }
    if matches!(cfg.operator, OperatorKind::Ea) {
        let asym = op.asymmetry_norm()?;
        summary.insert("asymmetry".into(), json!(asym));
        passed &= asym == 0.0;
    }
    let rows = op
        .nonzeros()
        .into_iter()
        .map(|(row, col, value)| TripleRow { row, col, value })
        .collect();
    Ok(Report { rows, summary, passed })
}

pub fn cmd_eig_scan(cfg: &RunConfig) -> Result<Report<crate::stability::EigenScanRow>> {
    let c = cfg.coefficients;
    let rows = par_map(cfg.jobs, &cfg.domains()?, |spec| eigen_scan_row(&c, spec))?;
    let mut summary = Map::new();
    summary.insert("atomistic_margin".into(), json!(c.atomistic_margin()));
    summary.insert("any_negative_real".into(), json!(rows.iter().any(|r| r.negative_real_count > 0)));
    Ok(Report {
        rows,
        summary,
        passed: true,
    })
}

fn finish<R: Serialize>(cfg: &RunConfig, report: Result<Report<R>>) -> i32 {
    match report.and_then(|r| write_report(cfg, &r).map(|_| r.passed)) {
        Ok(true) => EXIT_PASS,
        Ok(false) => {
            eprintln!("qcf {}: a check failed; see {}", cfg.subcommand, cfg.out.display());
            EXIT_CHECK_FAILED
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CHECK_FAILED
        }
    }
}

/// Runs a parsed command and returns the exit status.
pub fn run(cli: Cli) -> i32 {
    let (name, flags) = cli.command.parts();
    let cfg = match RunConfig::resolve(name, flags) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            let mut cmd = Cli::command();
            cmd.build();
            if let Some(sub) = cmd.find_subcommand_mut(name) {
                eprintln!("\n{}", sub.render_usage());
            }
            return EXIT_USAGE;
        }
    };
    log::info!("running {name} with {} point(s)", cfg.domains().map(|d| d.len()).unwrap_or(0));
    match name {
        "patch-test" => finish(&cfg, cmd_patch_test(&cfg)),
        "coercivity" => finish(&cfg, cmd_coercivity(&cfg)),
        "infsup" => finish(&cfg, cmd_infsup(&cfg)),
        "convergence" => finish(&cfg, cmd_convergence(&cfg)),
        "dump-operator" => finish(&cfg, cmd_dump_operator(&cfg)),
        _ => finish(&cfg, cmd_eig_scan(&cfg)),
    }
}

/// Parses `args` and runs; clap usage errors map to exit status 2.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            code
        }
    }
}
