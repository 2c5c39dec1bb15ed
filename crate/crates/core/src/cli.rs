//! Command-line front end: PNG ingestion, solve orchestration and JSON reports.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::densities::{ellipticity_audit, AuditConfig, AuditReport, DataTermProfile, Density, DensityKind};
use crate::diagnostics::{run_diagnostics, sobolev_exponents, DiagnosticsReport, ExponentReport, Theorem};
use crate::energy::{energy, EnergyBreakdown, Problem};
use crate::error::Error;
use crate::grid::{ImageField, Mask};
use crate::oracle::{compare_solver, OracleComparison, OracleConfiguration};
use crate::solver::{continuation, SolverConfig, SolverTrace};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// Relative value tolerance of `oracle-compare`.
pub const ORACLE_VALUE_TOLERANCE: f64 = 1e-4;
const UNIQUENESS_TRIALS: usize = 2;
const INTEGRABILITY_ORDERS: [f64; 4] = [1.0, 2.0, 2.5, 4.0];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Io(_) => EXIT_IO,
            CliError::Solver(_) => EXIT_SOLVER,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Io(_) => "io",
            CliError::Solver(_) => "solver",
        }
    }

    /// Machine-readable error object.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": { "kind": self.kind(), "message": self.to_string(), "exit_code": self.exit_code() }
        })
        .to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFiniteEnergy { .. } | Error::OracleDisagreement(_) => CliError::Solver(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "lingrow", version, about = "Linear-growth variational denoising and inpainting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Denoise (and inpaint, with --mask) a PNG image.
    Restore(RestoreArgs),
    /// Print the Sobolev exponents and admissible μ range of a regularity result.
    Exponents(ExponentArgs),
    /// Sample the Hessian of a density and estimate its ellipticity constants.
    Audit(AuditArgs),
    /// Compare the solver against brute-force minimizers on random tiny problems.
    OracleCompare(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityArg {
    MuFamily,
    MinimalSurface,
}

impl From<DensityArg> for DensityKind {
    fn from(d: DensityArg) -> Self {
        match d {
            DensityArg::MuFamily => DensityKind::MuFamily,
            DensityArg::MinimalSurface => DensityKind::MinimalSurface,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataTermArg {
    Quadratic,
    LinearGrowth,
}

#[derive(Debug, Clone, Args)]
#[command(allow_negative_numbers = true)]
pub struct RestoreArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Nonzero pixels (first channel) mark the inpainting region.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DensityArg::MuFamily)]
    pub density: DensityArg,
    #[arg(long, default_value_t = 1.5)]
    pub mu: f64,
    #[arg(long = "data-term", value_enum, default_value_t = DataTermArg::Quadratic)]
    pub data_term: DataTermArg,
    /// Quadratic fidelity weight (default 10).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Linear-growth fidelity smoothing (default 0.1).
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long = "delta-start", default_value_t = 1e-1)]
    pub delta_start: f64,
    #[arg(long = "delta-factor", default_value_t = 1e-1)]
    pub delta_factor: f64,
    #[arg(long = "delta-steps", default_value_t = 4)]
    pub delta_steps: usize,
    /// Stationarity tolerance (default 1e-7 · sqrt(#pixels)).
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long = "max-iters", default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Omit wall-clock timings so repeated runs produce identical reports.
    #[arg(long)]
    pub deterministic: bool,
    /// Run the maximum-principle, dual-bound and uniqueness checks.
    #[arg(long)]
    pub diagnostics: bool,
}

#[derive(Debug, Clone, Args)]
#[command(allow_negative_numbers = true)]
pub struct ExponentArgs {
    #[arg(long)]
    pub n: u32,
    #[arg(long)]
    pub mu: f64,
    /// One of: planar-inpainting, planar-denoising, higher-dim-denoising,
    /// higher-dim-linear-data, regularized-solvability.
    #[arg(long)]
    pub theorem: String,
}

#[derive(Debug, Clone, Args)]
#[command(allow_negative_numbers = true)]
pub struct AuditArgs {
    #[arg(long, value_enum, default_value_t = DensityArg::MuFamily)]
    pub density: DensityArg,
    #[arg(long, default_value_t = 1.5)]
    pub mu: f64,
    /// Exponent to audit against; defaults to the density's own.
    #[arg(long = "audited-mu")]
    pub audited_mu: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long = "max-radius", default_value_t = 1e3)]
    pub max_radius: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
#[command(allow_negative_numbers = true)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Validated parameters of a `restore` run.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub input: PathBuf,
    pub mask: Option<PathBuf>,
    pub output: PathBuf,
    pub report: Option<PathBuf>,
    pub density: DensityArg,
    pub mu: f64,
    pub data_term: DataTermArg,
    pub lambda: Option<f64>,
    pub beta: Option<f64>,
    pub solver: SolverConfig<f64>,
    pub diagnostics: bool,
}

impl RunConfig {
    pub fn from_args(a: &RestoreArgs) -> Result<Self, CliError> {
        let invalid = |m: String| Err(CliError::Validation(m));
        if !(a.mu.is_finite() && a.mu > 1.0) {
            return invalid(format!("--mu must exceed 1, got {}", a.mu));
        }
        let (lambda, beta) = match a.data_term {
            DataTermArg::Quadratic => {
                if a.beta.is_some() {
                    return invalid("--beta applies only to --data-term linear-growth".into());
                }
                (Some(a.lambda.unwrap_or(10.0)), None)
            }
            DataTermArg::LinearGrowth => {
                if a.lambda.is_some() {
                    return invalid("--lambda applies only to --data-term quadratic".into());
                }
                (None, Some(a.beta.unwrap_or(0.1)))
            }
        };
        if let Some(l) = lambda {
            if !(l.is_finite() && l > 0.0) {
                return invalid(format!("--lambda must be positive, got {l}"));
            }
        }
        if let Some(b) = beta {
            if !(b.is_finite() && b > 0.0) {
                return invalid(format!("--beta must be positive, got {b}"));
            }
        }
        let solver = SolverConfig {
            max_iters: a.max_iters,
            grad_tol: a.tol,
            delta_start: a.delta_start,
            delta_factor: a.delta_factor,
            delta_steps: a.delta_steps,
            deterministic: a.deterministic,
            seed: a.seed,
            ..SolverConfig::default()
        };
        solver.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(Self {
            input: a.input.clone(),
            mask: a.mask.clone(),
            output: a.output.clone(),
            report: a.report.clone(),
            density: a.density,
            mu: if a.density == DensityArg::MinimalSurface { 3.0 } else { a.mu },
            data_term: a.data_term,
            lambda,
            beta,
            solver,
            diagnostics: a.diagnostics,
        })
    }

    fn density(&self) -> Result<Density<f64>, CliError> {
        Ok(Density::new(self.density.into(), self.mu)?)
    }

    fn data(&self) -> Result<DataTermProfile<f64>, CliError> {
        Ok(match self.data_term {
            DataTermArg::Quadratic => DataTermProfile::quadratic(self.lambda.unwrap_or(10.0))?,
            DataTermArg::LinearGrowth => DataTermProfile::linear_growth(self.beta.unwrap_or(0.1))?,
        })
    }
}

/// Sample layout of a decoded PNG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PngFormat {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    pub bit_depth: u8,
}

impl PngFormat {
    fn max_value(&self) -> f64 {
        if self.bit_depth == 16 {
            65535.0
        } else {
            255.0
        }
    }
}

struct RawImage {
    format: PngFormat,
    samples: Vec<u16>,
}

fn decode_png(path: &Path) -> Result<RawImage, CliError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| io_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| io_err(path, "image too large to decode"))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| io_err(path, e))?;
    let channels = match frame.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(CliError::Validation(format!("{}: palette PNGs are not supported", path.display())))
        }
    };
    let bit_depth = match frame.bit_depth {
        png::BitDepth::Eight => 8,
        png::BitDepth::Sixteen => 16,
        other => {
            return Err(CliError::Validation(format!(
                "{}: only 8- and 16-bit PNGs are supported, got {other:?}",
                path.display()
            )))
        }
    };
    let (w, h) = (frame.width as usize, frame.height as usize);
    let row_samples = w * channels;
    let mut samples = Vec::with_capacity(row_samples * h);
    for row in buf[..frame.buffer_size()].chunks_exact(frame.line_size).take(h) {
        if bit_depth == 8 {
            samples.extend(row[..row_samples].iter().map(|&b| u16::from(b)));
        } else {
            samples.extend(row[..2 * row_samples].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])));
        }
    }
    Ok(RawImage { format: PngFormat { width: frame.width, height: frame.height, channels, bit_depth }, samples })
}

/// Decoded image normalized to `[0, 1]`, the inpainting mask and the source
/// format.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub image: ImageField<f64>,
    pub mask: Mask,
    pub format: PngFormat,
}

/// Reads an 8/16-bit grayscale or RGB PNG and an optional mask PNG.
pub fn ingest(input: &Path, mask: Option<&Path>) -> Result<Ingested, CliError> {
    let raw = decode_png(input)?;
    let f = raw.format;
    if f.channels != 1 && f.channels != 3 {
        return Err(CliError::Validation(format!(
            "{}: input must be grayscale or RGB, got {} channels",
            input.display(),
            f.channels
        )));
    }
    let scale = 1.0 / f.max_value();
    let values = raw.samples.iter().map(|&s| f64::from(s) * scale).collect();
    let image = ImageField::new(f.width as usize, f.height as usize, f.channels, 1.0, values)?;
    let mask = match mask {
        None => Mask::empty(image.width(), image.height()),
        Some(path) => {
            let m = decode_png(path)?;
            if (m.format.width, m.format.height) != (f.width, f.height) {
                return Err(CliError::Validation(format!(
                    "mask is {}x{}, input is {}x{}",
                    m.format.width, m.format.height, f.width, f.height
                )));
            }
            let missing = m.samples.chunks_exact(m.format.channels).map(|px| px[0] != 0).collect();
            Mask::new(image.width(), image.height(), missing)?
        }
    };
    Ok(Ingested { image, mask, format: f })
}

/// Writes `image` clamped to `[0, 1]` and quantized to `format`'s bit depth.
pub fn emit(path: &Path, image: &ImageField<f64>, format: PngFormat) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), image.width() as u32, image.height() as u32);
    encoder.set_color(if image.channels() == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
    encoder.set_depth(if format.bit_depth == 16 { png::BitDepth::Sixteen } else { png::BitDepth::Eight });
    let max = format.max_value();
    let quantized = image.values().iter().map(|&v| (v.clamp(0.0, 1.0) * max).round() as u16);
    let data: Vec<u8> = if format.bit_depth == 16 {
        quantized.flat_map(u16::to_be_bytes).collect()
    } else {
        quantized.map(|v| v as u8).collect()
    };
    let mut writer = encoder.write_header().map_err(|e| io_err(path, e))?;
    writer.write_image_data(&data).map_err(|e| io_err(path, e))?;
    writer.finish().map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageInfo {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    pub bit_depth: u8,
    pub masked_pixels: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunDiagnostics {
    pub checks: DiagnosticsReport<f64>,
    pub exponents: Vec<ExponentReport<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub image: ImageInfo,
    pub trace: SolverTrace<f64>,
    pub energy_history: Vec<EnergyBreakdown<f64>>,
    /// Energy of the result with the Tikhonov term removed.
    pub final_energy: EnergyBreakdown<f64>,
    pub diagnostics: Option<RunDiagnostics>,
    pub elapsed_seconds: Option<f64>,
}

/// Solves the restoration described by `cfg`, writes the output image and the
/// report.
pub fn run(cfg: &RunConfig) -> Result<RunReport, CliError> {
    let started = Instant::now();
    let ingested = ingest(&cfg.input, cfg.mask.as_deref())?;
    let masked_pixels = ingested.mask.missing_count();
    let problem = Problem::new(cfg.density()?, cfg.data()?, ingested.image, ingested.mask)?;
    let (u, trace) = continuation(&problem, &cfg.solver)?;
    let final_energy = energy(&problem, &u, 0.0)?;
    let diagnostics = if cfg.diagnostics {
        let checks = run_diagnostics(&problem, &u, &cfg.solver, UNIQUENESS_TRIALS, &INTEGRABILITY_ORDERS)?;
        let planar = if masked_pixels > 0 { Theorem::PlanarInpainting } else { Theorem::PlanarDenoising };
        let exponents = [planar, Theorem::RegularizedSolvability]
            .into_iter()
            .map(|t| sobolev_exponents(2, cfg.mu, t))
            .collect::<Result<Vec<_>, _>>()?;
        Some(RunDiagnostics { checks, exponents })
    } else {
        None
    };
    emit(&cfg.output, &u, ingested.format)?;
    let f = ingested.format;
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        image: ImageInfo { width: f.width, height: f.height, channels: f.channels, bit_depth: f.bit_depth, masked_pixels },
        energy_history: trace.iterations.iter().map(|r| r.energy).collect(),
        trace,
        final_energy,
        diagnostics,
        elapsed_seconds: (!cfg.solver.deterministic).then(|| started.elapsed().as_secs_f64()),
    };
    if let Some(path) = &cfg.report {
        let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
        write_json(&mut w, &report).map_err(|e| io_err(path, e))?;
        w.flush().map_err(|e| io_err(path, e))?;
    }
    Ok(report)
}

/// JSON formatter printing every float with 17 significant digits.
struct SignificantDigits;

impl serde_json::ser::Formatter for SignificantDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

pub fn write_json<W: Write, S: Serialize>(writer: &mut W, value: &S) -> io::Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(&mut *writer, SignificantDigits);
    value.serialize(&mut ser).map_err(io::Error::other)?;
    writer.write_all(b"\n")
}

pub fn to_json_string<S: Serialize>(value: &S) -> String {
    let mut buf = Vec::new();
    write_json(&mut buf, value).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn exponents_command(a: &ExponentArgs) -> Result<ExponentReport<f64>, CliError> {
    let theorem = Theorem::from_name(&a.theorem).ok_or_else(|| {
        let names: Vec<_> = Theorem::ALL.iter().map(|t| t.name()).collect();
        CliError::Validation(format!("unknown theorem {:?}; expected one of {}", a.theorem, names.join(", ")))
    })?;
    Ok(sobolev_exponents(a.n, a.mu, theorem)?)
}

pub fn audit_command(a: &AuditArgs) -> Result<AuditReport<f64>, CliError> {
    let density = Density::new(a.density.into(), a.mu)?;
    let cfg = AuditConfig { sample_count: a.samples, max_radius: a.max_radius, seed: a.seed, ..AuditConfig::default() };
    Ok(ellipticity_audit(&density, a.audited_mu.unwrap_or(density.mu()), &cfg)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSuiteReport {
    pub tolerance: f64,
    pub results: Vec<OracleComparison>,
    pub pass: bool,
}

pub fn oracle_command(a: &OracleArgs) -> Result<OracleSuiteReport, CliError> {
    if a.instances == 0 {
        return Err(CliError::Validation("--instances must be >= 1".into()));
    }
    let cfg = SolverConfig::default();
    let results = OracleConfiguration::all()
        .into_iter()
        .enumerate()
        .map(|(i, c)| compare_solver(c, a.instances, a.seed.wrapping_add(i as u64), &cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let pass = results.iter().all(|r| r.max_value_rel_err < ORACLE_VALUE_TOLERANCE);
    Ok(OracleSuiteReport { tolerance: ORACLE_VALUE_TOLERANCE, results, pass })
}

/// Parses `args` and runs the command; returns the process exit code. Usage
/// errors are reported like validation errors.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            EXIT_OK
        }
        Err(e) => {
            let text = e.to_string();
            let summary: Vec<&str> = text.lines().take_while(|l| !l.trim().is_empty()).map(str::trim).collect();
            let err = CliError::Validation(summary.join(" ").trim_start_matches("error: ").to_string());
            eprintln!("{}", err.to_json());
            err.exit_code()
        }
    }
}

/// Runs a parsed command line; returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Restore(a) => RunConfig::from_args(&a).and_then(|cfg| run(&cfg)).map(|r| {
            serde_json::json!({
                "status": "ok",
                "output": r.config.output,
                "k_value": r.final_energy.total,
                "termination": r.trace.termination,
            })
            .to_string()
        }),
        Command::Exponents(a) => exponents_command(&a).map(|r| to_json_string(&r)),
        Command::Audit(a) => audit_command(&a).map(|r| to_json_string(&r)),
        Command::OracleCompare(a) => oracle_command(&a).map(|r| to_json_string(&r)),
    };
    match result {
        Ok(out) => {
            println!("{}", out.trim_end());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
